#include "ndi/bank.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "ndi/errors.hpp"

namespace ndi {

namespace {

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<NegativeInstance> mine_negatives(const Mat& S, const std::vector<int>& labels,
                                             const Mat& features, double tau) {
  if (S.rows != features.rows || S.cols != static_cast<int>(labels.size())) {
    throw ContractError("mine_negatives: score/label/feature shapes disagree");
  }
  std::vector<NegativeInstance> out;
  for (int j = 0; j < S.rows; ++j) {
    for (int c = 0; c < S.cols; ++c) {
      if (labels[c] != 0 || S(j, c) <= tau) continue;
      NegativeInstance neg;
      neg.proposal = j;
      neg.neg_class = c;
      neg.confidence = S(j, c);
      neg.feature.resize(features.cols);
      for (int d = 0; d < features.cols; ++d) neg.feature[d] = features(j, d);
      out.push_back(std::move(neg));
    }
  }
  return out;
}

NDIEntry cmu_update(const NDIEntry& entry, const Vec& f_new, double s_new) {
  if (s_new <= 0.0) throw ContractError("cmu_update: s_new must be positive");
  const double denom = entry.ns + s_new;
  const double w_old = entry.ns / denom;
  const double w_new = s_new / denom;
  NDIEntry out;
  out.nf.resize(entry.nf.size());
  double norm2 = 0.0;
  for (std::size_t d = 0; d < entry.nf.size(); ++d) {
    out.nf[d] = w_old * entry.nf[d] + w_new * f_new[d];
    norm2 += out.nf[d] * out.nf[d];
  }
  const double norm = std::sqrt(norm2);
  if (norm > 0.0 && norm != 1.0) {
    for (double& x : out.nf) x /= norm;
  }
  out.ns = w_old * entry.ns + w_new * s_new;
  out.ns = std::clamp(out.ns, std::min(entry.ns, s_new), std::max(entry.ns, s_new));
  return out;
}

NDIBank::NDIBank(int categories, int capacity) : capacity_(capacity) {
  if (categories < 1) throw ConfigError("bank categories must be >= 1");
  if (capacity < 1) throw ConfigError("queue_len must be >= 1");
  queues_.resize(categories);
}

int NDIBank::total_entries() const {
  int n = 0;
  for (const auto& q : queues_) n += static_cast<int>(q.size());
  return n;
}

void NDIBank::insert(const std::vector<NegativeInstance>& negatives, BankUpdate mode) {
  for (const auto& neg : negatives) {
    auto& q = queues_.at(neg.neg_class);
    if (static_cast<int>(q.size()) < capacity_) {
      q.push_back(NDIEntry{neg.feature, neg.confidence});
      continue;
    }
    if (mode == BankUpdate::kFifo) {
      q.erase(q.begin());
      q.push_back(NDIEntry{neg.feature, neg.confidence});
      continue;
    }
    int best = 0;
    double best_sim = dot(q[0].nf, neg.feature);
    for (int i = 1; i < static_cast<int>(q.size()); ++i) {
      const double sim = dot(q[i].nf, neg.feature);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    q[best] = cmu_update(q[best], neg.feature, neg.confidence);
  }
}

std::optional<BankQuery> NDIBank::query(int c, const Vec& feature) const {
  const auto& q = queues_.at(c);
  if (q.empty()) return std::nullopt;
  BankQuery best{0, dot(q[0].nf, feature), q[0].ns};
  for (int i = 1; i < static_cast<int>(q.size()); ++i) {
    const double sim = dot(q[i].nf, feature);
    if (sim > best.similarity) best = BankQuery{i, sim, q[i].ns};
  }
  return best;
}

void save_bank(const NDIBank& bank, const std::string& path) {
  nlohmann::json queues = nlohmann::json::array();
  for (int c = 0; c < bank.categories(); ++c) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& e : bank.queue(c)) {
      q.push_back({{"nf", e.nf}, {"ns", e.ns}});
    }
    queues.push_back(std::move(q));
  }
  detail::write_json_file({{"capacity", bank.capacity()}, {"queues", std::move(queues)}}, path,
                          "bank");
}

NDIBank load_bank(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path, "bank");
  const auto& queues = j.at("queues");
  NDIBank bank(static_cast<int>(queues.size()), j.at("capacity").get<int>());
  for (int c = 0; c < bank.categories(); ++c) {
    std::vector<NegativeInstance> negs;
    for (const auto& e : queues.at(c)) {
      NegativeInstance neg;
      neg.neg_class = c;
      neg.feature = e.at("nf").get<Vec>();
      neg.confidence = e.at("ns").get<double>();
      negs.push_back(std::move(neg));
    }
    bank.insert(negs);  // queues were <= capacity on save, so this is a FIFO refill
  }
  return bank;
}

}  // namespace ndi
