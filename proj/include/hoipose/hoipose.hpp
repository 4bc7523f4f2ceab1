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
// Everything in one include.
#pragma once

#include "hoipose/common.hpp"
#include "hoipose/config.hpp"
#include "hoipose/convert.hpp"
#include "hoipose/demo_humanoid.hpp"
#include "hoipose/demo_scene.hpp"
#include "hoipose/diagnostics.hpp"
#include "hoipose/field.hpp"
#include "hoipose/geometry.hpp"
#include "hoipose/guidance.hpp"
#include "hoipose/image.hpp"
#include "hoipose/mesh_io.hpp"
#include "hoipose/optim.hpp"
#include "hoipose/pipeline.hpp"
#include "hoipose/protocol.hpp"
#include "hoipose/regularize.hpp"
#include "hoipose/render.hpp"
#include "hoipose/rig_io.hpp"
#include "hoipose/skeleton.hpp"
