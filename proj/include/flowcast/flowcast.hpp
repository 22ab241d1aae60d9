// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "flowcast/baselines.hpp"
#include "flowcast/compression.hpp"
#include "flowcast/core.hpp"
#include "flowcast/ensemble.hpp"
#include "flowcast/estimator.hpp"
#include "flowcast/harness.hpp"
#include "flowcast/io.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/policies.hpp"
#include "flowcast/regression.hpp"
