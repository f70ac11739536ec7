#pragma once

#include "satemu/harness/config.hpp"
#include "satemu/harness/matrix.hpp"
#include "satemu/harness/results.hpp"
