// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dpef/numerics/adam.hpp"
#include "dpef/numerics/grad_check.hpp"
#include "dpef/numerics/ops.hpp"
#include "dpef/numerics/tensor.hpp"
