#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "setchain/element.hpp"
#include "setchain/history.hpp"
#include "setchain/netsim.hpp"

// Clients that tolerate Byzantine servers: fan-out add/epoch_inc to f+1
// servers, quorum gets that keep only what f+1 servers agree on, and a
// cheap single-server mode backed by epoch certificates.
namespace setchain::client {

class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One server's claimed state, already authenticated.
struct Response {
  NodeId server = 0;
  GetResult result;
};

/// Combines responses from distinct servers. S holds the elements reported
/// by at least f+1 responders plus every element of the agreed epochs. H is
/// built epoch by epoch while f+1 responders still in the candidate pool
/// report the same set; responders that disagree, or whose history ends at
/// the current epoch, leave the pool. Responses whose history is not
/// contained in their own set are ignored, as are repeated servers.
GetResult assemble_get(const std::vector<Response>& responses, std::size_t f);

/// Copy of `r` without certificate elements, in S and in H.
GetResult strip_certificates(const GetResult& r);

enum class CheckStatus : std::uint8_t { stamped, pending, unknown };

struct CheckResult {
  CheckStatus status = CheckStatus::unknown;
  EpochId epoch = 0;
  std::optional<EpochCertificate> certificate;
};

/// Classifies element `id` against one server's (unverified) result:
/// stamped only when some certificate element in S carries f+1 valid server
/// signatures over the epoch holding `id` and that epoch's digest; pending
/// when `id` is in S but not stamped; unknown otherwise, including stamped
/// epochs without a valid certificate.
CheckResult optimistic_check(const Digest& id, const GetResult& result, std::span<const PublicKey> server_keys,
                             std::size_t f, SignatureScheme scheme);

struct ClientConfig {
  std::vector<NodeId> servers;
  std::size_t f = 1;
  SimTime timeout = 40;
  std::size_t retry_limit = 3;
  /// Extra ticks to collect responses beyond the first 2f+1.
  SimTime grace = 0;
  std::shared_ptr<const std::vector<PublicKey>> server_keys;
  ValidationPolicy validation;
};

class ClientProcess : public netsim::Process {
 public:
  using GetCallback = std::function<void(netsim::Context&, const std::optional<GetResult>&)>;
  using CheckCallback = std::function<void(netsim::Context&, const std::optional<CheckResult>&)>;

  /// Throws ClientError when fewer than f+1 servers are configured.
  explicit ClientProcess(ClientConfig cfg);

  /// Sends add(e) to f+1 distinct servers. False, with nothing sent, for an
  /// invalid element.
  bool dpo_add(netsim::Context& ctx, const Element& e);
  /// Sends epoch_inc(h) to f+1 distinct servers.
  void dpo_epoch_inc(netsim::Context& ctx, EpochId h);
  /// Queries every server (at least 3f+1) and calls back with the combined
  /// result once 2f+1 authenticated responses are in; retries on timeout
  /// and reports nullopt after the retry limit.
  void dpo_get(netsim::Context& ctx, GetCallback cb);

  /// One add request to one server.
  bool optimistic_add(netsim::Context& ctx, const Element& e);
  /// Fetches one server's state and classifies `id`; on timeout moves on to
  /// the next server.
  void optimistic_check(netsim::Context& ctx, const Digest& id, CheckCallback cb);

  void on_message(netsim::Context& ctx, NodeId from, const Bytes& body) override;
  void on_timer(netsim::Context& ctx, netsim::TimerTag tag) override;

  std::uint64_t requests_sent() const { return requests_sent_; }
  const ClientConfig& config() const { return cfg_; }

 private:
  struct PendingGet {
    GetCallback cb;
    std::map<NodeId, GetResult> responses;
    std::size_t attempts = 1;
    bool quorum = false;
  };
  struct PendingCheck {
    CheckCallback cb;
    Digest id;
    std::size_t attempts = 1;
    std::size_t server_index = 0;
  };

  std::vector<NodeId> pick(std::size_t count);
  void send_gets(netsim::Context& ctx, std::uint64_t rid);
  void send_check(netsim::Context& ctx, std::uint64_t rid, PendingCheck& pc);
  void finish_get(netsim::Context& ctx, std::uint64_t rid);
  void send(netsim::Context& ctx, NodeId to, Bytes body);

  ClientConfig cfg_;
  std::uint64_t next_request_ = 1;
  std::size_t rotation_ = 0;
  std::uint64_t requests_sent_ = 0;
  std::map<std::uint64_t, PendingGet> gets_;
  std::map<std::uint64_t, PendingCheck> checks_;
};

}  // namespace setchain::client
