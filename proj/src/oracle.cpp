#include "setchain/oracle.hpp"

#include <stdexcept>
#include <string>

namespace setchain {

bool SequentialSetchain::add(const Element& e) {
  Digest id = element_id(e);
  if (!validate(e, id, policy_)) return false;
  theset_.emplace(id, e);
  return true;
}

void SequentialSetchain::epoch_inc(EpochId h) {
  if (h != epoch() + 1) {
    throw std::logic_error("epoch_inc(" + std::to_string(h) + ") at epoch " + std::to_string(epoch()));
  }
  DigestSet proposal;
  for (const auto& [id, e] : theset_) {
    if (!history_.contains(id)) proposal.insert(id);
  }
  history_.append(std::move(proposal));
}

}  // namespace setchain
