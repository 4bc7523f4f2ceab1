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

#include "hoipose/common.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hoi {

/// Row-major multi-channel image; row 0 is the top of the picture.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }

    double squared_norm() const {
        double s = 0.0;
        for (double v : data) {
            s += v * v;
        }
        return s;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidArgument(std::string(what) + ": image shapes differ");
    }
}

inline double mean_squared_error(const Image& a, const Image& b) {
    require_same_shape(a, b, "mean_squared_error");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return a.data.empty() ? 0.0 : s / static_cast<double>(a.data.size());
}

/// Binary PPM (P6), 8 bits per channel, round(255 * clamp(v, 0, 1)).
inline void write_ppm(std::ostream& out, const Image& img) {
    if (img.channels != 3) {
        throw InvalidArgument("PPM needs a 3-channel image");
    }
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::string row(static_cast<std::size_t>(img.width) * 3, '\0');
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
                row[3 * x + c] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v)));
            }
        }
        out.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
}

inline void save_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    write_ppm(out, img);
}

/// PFM, little-endian 32-bit floats ("PF" for 3 channels, "Pf" for 1).
/// Scanlines are stored bottom to top as the format requires.
inline std::string encode_pfm(const Image& img) {
    if (img.channels != 3 && img.channels != 1) {
        throw InvalidArgument("PFM supports 1 or 3 channels");
    }
    std::ostringstream out(std::ios::binary);
    out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
    std::string buf(static_cast<std::size_t>(img.width) * img.channels * 4, '\0');
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                const auto f = static_cast<float>(img.at(x, y, c));
                std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
                if constexpr (std::endian::native == std::endian::big) {
                    bits = __builtin_bswap32(bits);
                }
                std::memcpy(&buf[(static_cast<std::size_t>(x) * img.channels + c) * 4], &bits, 4);
            }
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    return out.str();
}

inline Image decode_pfm(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    std::string magic;
    int w = 0;
    int h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    if (!in || (magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0.0) {
        throw ParseError("malformed PFM header", 0);
    }
    in.get(); // single whitespace after the scale
    const int channels = magic == "PF" ? 3 : 1;
    const bool little = scale < 0.0;
    Image img(w, h, channels);
    std::string buf(static_cast<std::size_t>(w) * channels * 4, '\0');
    for (int y = h - 1; y >= 0; --y) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
            throw ParseError("truncated PFM data", 0);
        }
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                std::uint32_t bits = 0;
                std::memcpy(&bits, &buf[(static_cast<std::size_t>(x) * channels + c) * 4], 4);
                if (little != (std::endian::native == std::endian::little)) {
                    bits = __builtin_bswap32(bits);
                }
                img.at(x, y, c) = static_cast<double>(std::bit_cast<float>(bits));
            }
        }
    }
    return img;
}

inline void save_pfm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const auto bytes = encode_pfm(img);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Image load_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_pfm(ss.str());
}

inline std::string base64_encode(const std::string& bytes) {
    using namespace boost::archive::iterators;
    using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
    std::string out(It(bytes.begin()), It(bytes.end()));
    out.append((3 - bytes.size() % 3) % 3, '=');
    return out;
}

inline std::string base64_decode(const std::string& text) {
    using namespace boost::archive::iterators;
    using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
    std::string s = text;
    std::size_t pad = 0;
    while (!s.empty() && s.back() == '=') {
        s.pop_back();
        ++pad;
    }
    for (char c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/')) {
            throw ParseError("invalid base64 character", 0);
        }
    }
    // binary_from_base64 maps 'A' to zero bits, so padding decodes cleanly
    s.append(pad, 'A');
    std::string out(It(s.begin()), It(s.end()));
    out.resize(out.size() - std::min(out.size(), pad));
    return out;
}

} // namespace hoi
