#pragma once

#include <cstdint>

namespace setchain {

using NodeId = std::uint32_t;
/// 0 means "no epoch stamped yet"; stamped epochs start at 1.
using EpochId = std::uint64_t;
/// Abstract simulator ticks.
using SimTime = std::uint64_t;

}  // namespace setchain
