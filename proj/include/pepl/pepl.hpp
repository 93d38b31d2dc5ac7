// Copyright 2026 The PEPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include "pepl/cam_engine.hpp"
#include "pepl/config.hpp"
#include "pepl/datagen.hpp"
#include "pepl/heatmap.hpp"
#include "pepl/model_zoo.hpp"
#include "pepl/objectives.hpp"
#include "pepl/rng.hpp"
#include "pepl/semantic_mixer.hpp"
#include "pepl/tensor.hpp"
#include "pepl/threshold_scheduler.hpp"
#include "pepl/trainer.hpp"
