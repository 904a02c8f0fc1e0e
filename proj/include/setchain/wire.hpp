#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace setchain::wire {

// First byte of every message body; the simulator counts sends per channel.
inline constexpr std::uint8_t kBrbOps = 0x10;        // madd / mepochinc dissemination
inline constexpr std::uint8_t kBrbProposals = 0x11;  // SBC proposal dissemination
inline constexpr std::uint8_t kSbcConsensus = 0x20;  // per-slot binary consensus votes
inline constexpr std::uint8_t kCertShare = 0x30;     // epoch digest signature share
inline constexpr std::uint8_t kClientRequest = 0x40;
inline constexpr std::uint8_t kClientResponse = 0x41;

inline std::map<std::uint8_t, std::string> channel_names() {
  return {{kBrbOps, "brb"},          {kBrbProposals, "brb-proposal"}, {kSbcConsensus, "sbc"},
          {kCertShare, "cert-share"}, {kClientRequest, "client-req"},  {kClientResponse, "client-resp"}};
}

}  // namespace setchain::wire
