/*
 * Copyright 2026 The BHE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef BHE_BHE_HPP_
#define BHE_BHE_HPP_

#include "bhe/common.hpp"
#include "bhe/data.hpp"
#include "bhe/debias.hpp"
#include "bhe/eval.hpp"
#include "bhe/exploit.hpp"
#include "bhe/explore.hpp"
#include "bhe/kmeans.hpp"
#include "bhe/models.hpp"
#include "bhe/synth.hpp"

#endif  // BHE_BHE_HPP_
