// SPDX-License-Identifier: Apache-2.0
// libtorch ships glog-style CHECK macros; load it first and let doctest's
// assertion macros take over the names.
#pragma once

#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT

#include <doctest.h>
