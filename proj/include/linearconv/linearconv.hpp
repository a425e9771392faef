/* Copyright 2026 The LinearConv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include "linearconv/accounting.hpp"
#include "linearconv/arch.hpp"
#include "linearconv/checkpoint.hpp"
#include "linearconv/correlation.hpp"
#include "linearconv/data.hpp"
#include "linearconv/errors.hpp"
#include "linearconv/gemm.hpp"
#include "linearconv/linear_conv.hpp"
#include "linearconv/model.hpp"
#include "linearconv/ops.hpp"
#include "linearconv/optim.hpp"
#include "linearconv/tensor.hpp"
#include "linearconv/train.hpp"
