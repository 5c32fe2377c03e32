#pragma once

#include <optional>
#include <string>
#include <vector>

#include "steel/common.hpp"

namespace steel {

/// Batch of transitions (s, a, r, s') grouped into trajectories. Row r of each
/// matrix is one transition; trajectory i owns rows
/// [trajectory_offsets[i], trajectory_offsets[i + 1]).
struct TransitionDataset {
  Points states;
  Points actions;
  Vector rewards;
  Points next_states;
  std::vector<Index> trajectory_offsets{0};
  std::optional<double> reward_bound;

  Index size() const { return rewards.size(); }
  Index num_trajectories() const {
    return static_cast<Index>(trajectory_offsets.size()) - 1;
  }
  Index state_dim() const { return states.cols(); }
  Index action_dim() const { return actions.cols(); }

  /// Rows (s, a) stacked as state-action points.
  Points state_actions() const { return hconcat(states, actions); }

  /// Largest |r|, or the declared bound when present.
  double max_abs_reward() const;

  /// Throws on any invariant violation (dims, finiteness, contiguity, bound).
  void validate() const;

  /// Rows picked by index, each row becoming its own one-step trajectory.
  TransitionDataset select_rows(const std::vector<Index>& rows) const;
};

/// Single-step (contextual bandit) data (s0, a0, r0).
struct BanditDataset {
  Points states;
  Points actions;
  Vector rewards;

  Index size() const { return rewards.size(); }
  void validate() const;

  /// One-step trajectories with s' = s; the successor is unused when gamma = 0.
  TransitionDataset as_transitions() const;
};

/// Maps CSV header names to dataset roles.
struct CsvSchema {
  std::string trajectory_column = "traj_id";
  std::string step_column = "t";
  std::vector<std::string> state_columns;
  std::vector<std::string> action_columns;
  std::string reward_column = "r";
};

/// Reads a transition CSV. Rows are sorted by (traj_id, t); s' is taken from
/// the next row of the same trajectory and each trajectory's last row, which
/// has no successor, is dropped.
TransitionDataset load_transitions(const std::string& path, const CsvSchema& schema);

/// Writes a dataset in the format `load_transitions` reads back. Each
/// trajectory gets one extra terminal row carrying its final s' (with zero
/// action and reward); values use 17 significant digits.
void save_transitions(const TransitionDataset& dataset, const std::string& path,
                      const CsvSchema& schema);

struct LoanRecord {
  double fico = 0.0;
  double loan_amount_approved = 0.0;
  double prime_rate = 0.0;
  double competitor_rate = 0.0;
  int term = 1;
  double monthly_payment = 0.0;
  bool accepted = false;

  void validate() const;
};

/// Net present value of `term` payments discounted at the prime rate, minus
/// the loan amount.
double compute_loan_price(double payment, int term, double prime_rate, double loan_amount);

/// Per-feature z-score statistics. Constant columns keep unit scale.
struct FeatureStandardizer {
  Vector mean;
  Vector scale;

  Vector apply(const VectorRef& raw) const;
};

struct PricingDataset {
  BanditDataset data;
  FeatureStandardizer standardizer;
  Index input_records = 0;
  Index retained_records = 0;

  double retained_fraction() const {
    return input_records == 0 ? 0.0
                              : static_cast<double>(retained_records) /
                                    static_cast<double>(input_records);
  }
};

inline constexpr double kPriceOutlierThreshold = 10000.0;

/// Builds the pricing bandit: states are the standardized features (fico,
/// amount, prime, competitor, term) plus an intercept; the action is the
/// price; the reward is the price when the offer was accepted and 0 otherwise.
/// Records priced above kPriceOutlierThreshold are dropped.
PricingDataset build_pricing_dataset(const std::vector<LoanRecord>& records);

/// Raw (unstandardized) pricing feature vector of a record.
Vector pricing_features(const LoanRecord& record);

std::vector<LoanRecord> load_loan_records(const std::string& path);
void save_loan_records(const std::vector<LoanRecord>& records, const std::string& path);

}  // namespace steel
