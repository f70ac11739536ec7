#pragma once

#include "satemu/workloads/bulk.hpp"
#include "satemu/workloads/manifest.hpp"
#include "satemu/workloads/testbed.hpp"
#include "satemu/workloads/web.hpp"
