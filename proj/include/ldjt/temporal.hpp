#pragma once

// Interface-message engine over a sequence of instantiated jtrees: forward
// α messages, backward β walks for smoothing, scratch forward walks for
// prediction, and the keep / reinstantiate / combined retention strategies.

#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ldjt/jtree.hpp"

namespace ldjt {

enum class Strategy { keep, reinstantiate, combined };

struct EngineOptions {
  Strategy strategy = Strategy::keep;
  int window = 10;  // retained past jtrees; 0 with `keep` means unbounded
};

/// A query by lag relative to the issuing step; negative lags predict.
struct LagQuery {
  GroundTerm term;
  int lag = 0;
};

struct Answer {
  TemporalQuery query;
  int lag = 0;
  bool clamped = false;  // t - lag < 0, answered at π = 0
  Distribution dist;
};

/// Resolves a lag at step `t`; sets `clamped` when π would be negative.
TemporalQuery resolve(const LagQuery& q, int t, bool* clamped = nullptr);

class Engine {
 public:
  explicit Engine(DynamicModel d, EngineOptions opt = {});

  /// Continues from checkpoint records (see write_checkpoint); the engine
  /// stands at the step after the last record, with no retained jtrees.
  static Engine resume(DynamicModel d, EngineOptions opt, std::istream& records);

  int step() const { return t_; }
  const DynamicModel& model() const { return d_; }
  const DynamicJtrees& templates() const { return tpl_; }
  const FoJtree& current() const { return current_; }
  const Evidence& evidence_log() const { return evidence_; }
  const std::map<int, Message>& alpha_log() const { return alpha_; }
  const Counters& counters() const { return counters_; }
  /// Steps of the retained past jtrees, oldest first.
  std::vector<int> retained() const;

  /// Adds evidence for the current step. Invalidates messages and any α
  /// already computed for this step.
  void observe(std::span<const EvidenceEntry> evidence);

  /// Answers queries issued at the current step, returned in input order.
  std::vector<Answer> answer(std::span<const TemporalQuery> queries);
  std::vector<Answer> answer_lags(std::span<const LagQuery> queries);

  /// Emits α for the current step and moves to the next one.
  void advance();

  /// Fresh J_s from the templates, the logs and an optional β_{s+1}
  /// (slice 0 form). Full pass when `queries`, else inbound to the
  /// in-cluster. Throws unless s < step().
  FoJtree reinstantiate(int s, const Message* beta, bool queries);

  /// One JSON record per completed step: evidence and α.
  void write_checkpoint(std::ostream& out) const;

 private:
  FoJtree build(int s, const Message* alpha_prev, const Message* beta,
                std::span<const EvidenceEntry> now, std::span<const EvidenceEntry> prev) const;
  Message alpha_of(FoJtree& j);
  Message beta_of(FoJtree& j);
  const Message& current_alpha();
  FoJtree previous(int s, const Message& beta, bool queries);
  void calibrate(FoJtree& j);

  DynamicModel d_;
  EngineOptions opt_;
  DynamicJtrees tpl_;
  std::vector<std::pair<PrvId, PrvId>> to_prev_;  // slice 0 -> slice -1
  std::vector<std::pair<PrvId, PrvId>> to_now_;

  int t_ = 0;
  FoJtree current_;
  Evidence evidence_;
  std::map<int, Message> alpha_;  // α_s in slice -1 form, ready for J_{s+1}
  std::deque<std::pair<int, FoJtree>> window_;
  std::optional<Message> alpha_cache_;
  Counters counters_;
};

struct Schedule {
  Evidence evidence;
  std::map<int, std::vector<LagQuery>> queries;
  int last_step = 0;
};

struct SessionResult {
  std::vector<Answer> answers;
  std::vector<Counters> per_step;
};

/// Steps 0..last_step: evidence, queries by ascending lag, forward pass.
SessionResult run_session(const DynamicModel& d, const Schedule& s, EngineOptions opt = {});

/// The same queries answered by a static jtree on unroll(d, max(t, π))
/// given E_{0:t}, one unrolled model per issuing step and horizon.
std::vector<Distribution> unrolled_answers(const DynamicModel& d, const Evidence& e,
                                           std::span<const TemporalQuery> queries,
                                           Counters* counters = nullptr);

}  // namespace ldjt
