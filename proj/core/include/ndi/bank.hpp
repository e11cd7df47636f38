#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ndi/mat.hpp"

namespace ndi {

/// One distilled negative instance: a unit-norm feature and its confidence.
struct NDIEntry {
  Vec nf;
  double ns = 0.0;
};

/// A proposal confidently scored for a category absent from its image.
struct NegativeInstance {
  int proposal = 0;
  int neg_class = 0;
  double confidence = 0.0;
  Vec feature;
};

struct BankQuery {
  int index = 0;
  double similarity = 0.0;
  double ns = 0.0;
};

enum class BankUpdate { kCmu, kFifo };

/// Every (proposal, class) pair with y_c = 0 and S[j,c] > tau, in proposal-major order.
std::vector<NegativeInstance> mine_negatives(const Mat& S, const std::vector<int>& labels,
                                             const Mat& features, double tau);

/// Confidence-driven momentum update: both the feature and the confidence move
/// toward the incoming instance with weight s_new/(ns+s_new). The feature is
/// renormalized to unit length; the confidence is clamped into
/// [min(ns,s_new), max(ns,s_new)] to keep the convex-combination bound exact
/// under rounding.
NDIEntry cmu_update(const NDIEntry& entry, const Vec& f_new, double s_new);

/// Per-class bounded queues of NDIEntry. Queues fill FIFO; once full, each
/// incoming instance updates its most cosine-similar entry (CMU) or evicts the
/// oldest (FIFO mode).
class NDIBank {
 public:
  NDIBank() = default;
  NDIBank(int categories, int capacity);

  int categories() const { return static_cast<int>(queues_.size()); }
  int capacity() const { return capacity_; }
  const std::vector<NDIEntry>& queue(int c) const { return queues_[c]; }
  int total_entries() const;
  bool empty() const { return total_entries() == 0; }

  void insert(const std::vector<NegativeInstance>& negatives, BankUpdate mode = BankUpdate::kCmu);

  /// Most similar entry of queue c by cosine (ties -> lowest index); nullopt when empty.
  std::optional<BankQuery> query(int c, const Vec& feature) const;

 private:
  int capacity_ = 0;
  std::vector<std::vector<NDIEntry>> queues_;
};

void save_bank(const NDIBank& bank, const std::string& path);
NDIBank load_bank(const std::string& path);

}  // namespace ndi
