#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "setchain/crypto.hpp"
#include "setchain/netsim.hpp"

// Randomised invariant suites. Every run is a pure function of its seed, so
// a reported violation can be replayed by rerunning that single cell.
namespace setchain::properties {

struct Report {
  std::string name;
  std::uint64_t runs = 0;
  std::uint64_t checks = 0;
  std::uint64_t violations = 0;
  /// The first few violation descriptions.
  std::vector<std::string> failures;

  bool ok() const { return violations == 0; }
  void check(bool ok, const std::string& what);
  void merge(const Report& other);
  std::string summary() const;
};

struct SetchainSuiteConfig {
  std::vector<std::size_t> sizes{4, 7, 10};
  std::vector<netsim::ByzantineMode> modes{netsim::ByzantineMode::correct, netsim::ByzantineMode::silent,
                                           netsim::ByzantineMode::equivocate_brb};
  std::uint64_t seeds = 100;
  std::uint64_t first_seed = 0;
  std::size_t min_adds = 200;
  std::size_t min_epochs = 10;
  SignatureScheme scheme = SignatureScheme::ed25519;
};

/// One randomised cluster run (random delays, GST, stamping policy,
/// aggregation and certificates) checked for consistent sets, add-get,
/// eventual-get, unique epochs, prefix agreement and provenance.
Report check_setchain_run(std::size_t n, netsim::ByzantineMode mode, std::uint64_t seed,
                          const SetchainSuiteConfig& cfg = {});
Report run_setchain_suite(const SetchainSuiteConfig& cfg = {});

struct BrbCell {
  std::size_t n = 4;
  std::uint64_t seeds = 1000;
};

struct BrbSuiteConfig {
  std::vector<BrbCell> cells{{4, 1000}, {7, 100}, {10, 100}};
  std::vector<netsim::ByzantineMode> modes{netsim::ByzantineMode::silent, netsim::ByzantineMode::equivocate_brb};
  std::size_t broadcasts_per_node = 3;
};

/// Agreement, validity, at-most-once and totality of reliable broadcast
/// with f faulty nodes.
Report check_brb_run(std::size_t n, netsim::ByzantineMode mode, std::uint64_t seed, std::size_t broadcasts_per_node);
Report run_brb_suite(const BrbSuiteConfig& cfg = {});

struct SbcSuiteConfig {
  std::size_t n = 4;
  std::uint64_t seeds = 1000;
};

/// Four consecutive instances: random proposals, identical proposals,
/// proposals sharing one element (started after GST), and sparse
/// proposals. The faulty mode rotates with the seed.
Report check_sbc_run(std::size_t n, std::uint64_t seed);
Report run_sbc_suite(const SbcSuiteConfig& cfg = {});

struct OracleSuiteConfig {
  std::uint64_t scripts = 100;
  std::size_t ops = 50;
};

/// Serialized scripts (every operation runs to quiescence) must match the
/// sequential setchain epoch by epoch; concurrent scripts must match its
/// union of stamped elements.
Report check_oracle_script(std::uint64_t seed, std::size_t ops, bool serialized);
Report run_oracle_suite(const OracleSuiteConfig& cfg = {});

/// n=4, f=1: every forged response over a two-epoch history against
/// assemble_get (and through a live client), plus every combination of
/// certificate signatures a single faulty server can produce against
/// optimistic_check.
Report run_client_suite();

struct PropertiesConfig {
  SetchainSuiteConfig setchain;
  BrbSuiteConfig brb;
  SbcSuiteConfig sbc;
  OracleSuiteConfig oracle;
  bool client = true;
};

/// Runs every suite in order; `progress` sees each report as it completes.
std::vector<Report> run_properties(const PropertiesConfig& cfg,
                                   const std::function<void(const Report&)>& progress = {});

}  // namespace setchain::properties
