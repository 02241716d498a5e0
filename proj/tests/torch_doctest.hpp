#pragma once

// libtorch's logging header defines glog-style CHECK macros that collide with
// doctest's assertion macros. Pull torch in first, drop its macros, then doctest.
#include "madm/nn.hpp"

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE

#include "doctest.h"
