#pragma once

#include "satemu/emunet/link.hpp"
#include "satemu/emunet/network.hpp"
#include "satemu/emunet/simulator.hpp"
