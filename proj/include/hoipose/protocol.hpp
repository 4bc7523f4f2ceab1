/*
 * Copyright 2026 The hoipose Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "hoipose/guidance.hpp"
#include "hoipose/rig_io.hpp"

#include <chrono>
#include <csignal>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace hoi {

/**
 * Newline-delimited JSON exchanged with out-of-process denoisers.
 *
 *   request:  {"id", "images": [base64 PFM], "t", "cameras": [[16 floats, row-major]] | null,
 *              "prompt": {"positive", "negative"}, "return_pair": bool}
 *   response: {"id", "eps_hat": [base64 PFM]} or {"id", "error"}
 *
 * With return_pair the bridge answers 2N images (positive predictions, then
 * negative); otherwise N images with guidance already applied.
 */
struct GuidanceRequest {
    std::string id;
    std::vector<Image> images;
    double t = 0.5;
    std::optional<std::vector<Mat4>> cameras;
    Prompt prompt;
    bool return_pair = true;
};

struct GuidanceResponse {
    std::string id;
    std::vector<Image> eps_hat;
    std::optional<std::string> error;
};

inline json encode_image(const Image& img) { return base64_encode(encode_pfm(img)); }
inline Image decode_image(const json& j) {
    if (!j.is_string()) {
        throw ParseError("image must be a base64 string", 0);
    }
    return decode_pfm(base64_decode(j.get<std::string>()));
}

inline json request_to_json(const GuidanceRequest& r) {
    json j;
    j["id"] = r.id;
    j["images"] = json::array();
    for (const auto& img : r.images) {
        j["images"].push_back(encode_image(img));
    }
    j["t"] = r.t;
    if (r.cameras) {
        j["cameras"] = json::array();
        for (const auto& m : *r.cameras) {
            json row = json::array();
            for (int i = 0; i < 4; ++i) {
                for (int k = 0; k < 4; ++k) {
                    row.push_back(m(i, k));
                }
            }
            j["cameras"].push_back(row);
        }
    } else {
        j["cameras"] = nullptr;
    }
    j["prompt"] = {{"positive", r.prompt.positive}, {"negative", r.prompt.negative}};
    j["return_pair"] = r.return_pair;
    return j;
}

inline GuidanceRequest request_from_json(const json& j) {
    try {
        GuidanceRequest r;
        r.id = j.at("id").get<std::string>();
        for (const auto& img : j.at("images")) {
            r.images.push_back(decode_image(img));
        }
        r.t = j.at("t").get<double>();
        if (j.contains("cameras") && !j.at("cameras").is_null()) {
            std::vector<Mat4> cams;
            for (const auto& row : j.at("cameras")) {
                if (row.size() != 16) {
                    throw ParseError("camera matrices have 16 entries", 0);
                }
                Mat4 m;
                for (int i = 0; i < 16; ++i) {
                    m(i / 4, i % 4) = row[i].get<double>();
                }
                cams.push_back(m);
            }
            r.cameras = std::move(cams);
        }
        r.prompt.positive = j.at("prompt").at("positive").get<std::string>();
        r.prompt.negative = j.at("prompt").value("negative", "");
        r.return_pair = j.value("return_pair", true);
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed guidance request: ") + e.what(), 0);
    }
}

inline json response_to_json(const GuidanceResponse& r) {
    json j;
    j["id"] = r.id;
    if (r.error) {
        j["error"] = *r.error;
    } else {
        j["eps_hat"] = json::array();
        for (const auto& img : r.eps_hat) {
            j["eps_hat"].push_back(encode_image(img));
        }
    }
    return j;
}

inline GuidanceResponse response_from_json(const json& j) {
    try {
        GuidanceResponse r;
        r.id = j.at("id").get<std::string>();
        if (j.contains("error")) {
            r.error = j.at("error").get<std::string>();
            return r;
        }
        for (const auto& img : j.at("eps_hat")) {
            r.eps_hat.push_back(decode_image(img));
        }
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed guidance response: ") + e.what(), 0);
    }
}

/// Checks a response against its request and splits it into predictions.
inline NoisePrediction prediction_from_response(const GuidanceRequest& req, const GuidanceResponse& resp) {
    if (resp.id != req.id) {
        throw Error("guidance response id '" + resp.id + "' does not match request '" + req.id + "'");
    }
    if (resp.error) {
        throw Error("guidance bridge error: " + *resp.error);
    }
    const std::size_t n = req.images.size();
    NoisePrediction p;
    if (resp.eps_hat.size() == 2 * n && req.return_pair) {
        p.positive.assign(resp.eps_hat.begin(), resp.eps_hat.begin() + static_cast<std::ptrdiff_t>(n));
        p.negative.assign(resp.eps_hat.begin() + static_cast<std::ptrdiff_t>(n), resp.eps_hat.end());
    } else if (resp.eps_hat.size() == n) {
        p.positive = resp.eps_hat;
        p.negative = resp.eps_hat; // guidance already applied by the bridge
    } else {
        throw Error("guidance response carries " + std::to_string(resp.eps_hat.size()) + " images for " +
                    std::to_string(n) + " inputs");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!p.positive[i].same_shape(req.images[i]) || !p.negative[i].same_shape(req.images[i])) {
            throw Error("guidance response image " + std::to_string(i) + " has the wrong shape");
        }
    }
    return p;
}

struct ExternalProviderConfig {
    std::string command; // run through /bin/sh -c; speaks the protocol on stdin/stdout
    Capability capability = Capability::single_view;
    double timeout_seconds = 60.0;
    int retries = 1;
    bool return_pair = true;
    std::string label = "external";
};

/**
 * Provider backed by a child process speaking the NDJSON protocol over its
 * stdin/stdout. One request in flight at a time. A timeout or a dead child
 * kills and restarts the process, up to `retries` extra attempts; error
 * responses are reported without retrying.
 */
class ExternalProvider : public GuidanceProvider {
public:
    explicit ExternalProvider(ExternalProviderConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.command.empty()) {
            throw InvalidArgument("external provider needs a command");
        }
    }
    ~ExternalProvider() override { stop(); }
    ExternalProvider(const ExternalProvider&) = delete;
    ExternalProvider& operator=(const ExternalProvider&) = delete;

    Capability capability() const override { return cfg_.capability; }
    std::string name() const override { return cfg_.label; }

    /// Sends one raw request line and returns the parsed response.
    GuidanceResponse exchange(const GuidanceRequest& req) {
        std::lock_guard lock(mutex_);
        const std::string line = request_to_json(req).dump() + "\n";
        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
            try {
                ensure_started();
                write_all(line);
                const std::string reply = read_line();
                return response_from_json(json::parse(reply));
            } catch (const TransportError& e) {
                last_error = e.what();
                stop();
            } catch (const json::exception& e) {
                last_error = std::string("unparsable reply: ") + e.what();
                stop();
            }
        }
        throw Error(cfg_.label + ": " + last_error + " (after " + std::to_string(cfg_.retries + 1) + " attempts)");
    }

protected:
    NoisePrediction do_predict(const std::vector<Image>& noisy, double t, const Prompt& prompt,
                               const std::vector<Mat4>* cameras) override {
        GuidanceRequest req;
        req.id = cfg_.label + "-" + std::to_string(++next_id_);
        req.images = noisy;
        req.t = t;
        if (cameras && cfg_.capability == Capability::multi_view) {
            req.cameras = *cameras;
        }
        req.prompt = prompt;
        req.return_pair = cfg_.return_pair;
        return prediction_from_response(req, exchange(req));
    }

private:
    struct TransportError : Error {
        using Error::Error;
    };

    void ensure_started() {
        if (pid_ > 0) {
            return;
        }
        int to_child[2];
        int from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0) {
            throw TransportError("cannot create pipes");
        }
        const pid_t pid = fork();
        if (pid < 0) {
            throw TransportError("cannot fork");
        }
        if (pid == 0) {
            setpgid(0, 0); // own group, so a kill reaches anything the shell spawned
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            execl("/bin/sh", "sh", "-c", cfg_.command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        setpgid(pid, pid);
        close(to_child[0]);
        close(from_child[1]);
        pid_ = pid;
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
        buffer_.clear();
    }

    void stop() {
        if (write_fd_ >= 0) {
            close(write_fd_);
        }
        if (read_fd_ >= 0) {
            close(read_fd_);
        }
        write_fd_ = read_fd_ = -1;
        if (pid_ > 0) {
            kill(-pid_, SIGKILL);
            kill(pid_, SIGKILL);
            waitpid(pid_, nullptr, 0);
        }
        pid_ = -1;
    }

    void write_all(const std::string& s) {
        // a dead reader must not kill us with SIGPIPE
        struct sigaction ignore {};
        struct sigaction previous {};
        ignore.sa_handler = SIG_IGN;
        sigaction(SIGPIPE, &ignore, &previous);
        std::size_t off = 0;
        while (off < s.size()) {
            const ssize_t n = write(write_fd_, s.data() + off, s.size() - off);
            if (n <= 0) {
                sigaction(SIGPIPE, &previous, nullptr);
                throw TransportError("bridge closed its input");
            }
            off += static_cast<std::size_t>(n);
        }
        sigaction(SIGPIPE, &previous, nullptr);
    }

    std::string read_line() {
        using clock = std::chrono::steady_clock;
        const auto deadline = clock::now() + std::chrono::duration<double>(cfg_.timeout_seconds);
        char chunk[65536];
        for (;;) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
            if (left <= 0) {
                throw TransportError("timed out waiting for the bridge");
            }
            pollfd pfd{read_fd_, POLLIN, 0};
            const int ready = poll(&pfd, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
            if (ready < 0) {
                throw TransportError("poll failed");
            }
            if (ready == 0) {
                continue;
            }
            const ssize_t n = read(read_fd_, chunk, sizeof chunk);
            if (n <= 0) {
                throw TransportError("bridge exited");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    ExternalProviderConfig cfg_;
    std::mutex mutex_;
    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    std::string buffer_;
    std::uint64_t next_id_ = 0;
};

} // namespace hoi
