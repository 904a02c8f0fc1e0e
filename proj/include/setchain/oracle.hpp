#pragma once

#include "setchain/element.hpp"
#include "setchain/history.hpp"

namespace setchain {

/// Single-server reference setchain. epoch_inc stamps everything added and
/// not yet stamped; used as ground truth for the distributed servers.
class SequentialSetchain {
 public:
  explicit SequentialSetchain(ValidationPolicy policy = {}) : policy_(std::move(policy)) {}

  /// False (and no effect) for invalid elements; duplicates are no-ops.
  bool add(const Element& e);
  /// Throws std::logic_error unless h == epoch() + 1.
  void epoch_inc(EpochId h);
  GetResult get() const { return {theset_, history_, history_.epoch()}; }

  EpochId epoch() const { return history_.epoch(); }
  const History& history() const { return history_; }

 private:
  ValidationPolicy policy_;
  ElementMap theset_;
  History history_;
};

}  // namespace setchain
