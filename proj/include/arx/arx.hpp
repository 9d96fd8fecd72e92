#pragma once

#include "arx/backend.hpp"
#include "arx/context.hpp"
#include "arx/errors.hpp"
#include "arx/expr.hpp"
#include "arx/format.hpp"
#include "arx/tensor.hpp"
