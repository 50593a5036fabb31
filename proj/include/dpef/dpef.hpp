// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dpef/augment.hpp"
#include "dpef/checkpoint.hpp"
#include "dpef/config.hpp"
#include "dpef/dataset.hpp"
#include "dpef/dpsm.hpp"
#include "dpef/encoder.hpp"
#include "dpef/eval.hpp"
#include "dpef/experiment.hpp"
#include "dpef/fbm.hpp"
#include "dpef/model.hpp"
#include "dpef/numerics.hpp"
#include "dpef/objective.hpp"
#include "dpef/png_io.hpp"
#include "dpef/train.hpp"
