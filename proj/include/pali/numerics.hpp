#pragma once

#include "pali/numerics/grad_check.hpp"
#include "pali/numerics/ops.hpp"
#include "pali/numerics/params.hpp"
#include "pali/numerics/resize.hpp"
#include "pali/numerics/tape.hpp"
#include "pali/numerics/tensor.hpp"
