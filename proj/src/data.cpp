#include "steel/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace steel {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    std::size_t start = 0;
    while (start < field.size() && field[start] == ' ') ++start;
    out.push_back(field.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, std::size_t line_no, const std::string& column) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error("parse failure at row " + std::to_string(line_no) + ", column '" + column +
                "': '" + text + "'");
  }
  if (!std::isfinite(value)) {
    throw Error("non-finite value at row " + std::to_string(line_no) + ", column '" + column +
                "'");
  }
  return value;
}

std::string format17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error("CSV header is missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (table.header.empty()) {
      table.header = split_csv_line(line);
      continue;
    }
    auto fields = split_csv_line(line);
    if (fields.size() != table.header.size()) {
      throw Error("parse failure at row " + std::to_string(line_no) + ": expected " +
                  std::to_string(table.header.size()) + " fields, got " +
                  std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (table.header.empty()) throw Error("'" + path + "' is empty");
  if (table.rows.empty()) throw Error("'" + path + "' has a header but no rows");
  return table;
}

}  // namespace

double TransitionDataset::max_abs_reward() const {
  if (reward_bound) return *reward_bound;
  return rewards.size() == 0 ? 0.0 : rewards.cwiseAbs().maxCoeff();
}

void TransitionDataset::validate() const {
  const Index n = size();
  require(n > 0, "dataset is empty");
  require(states.rows() == n && actions.rows() == n && next_states.rows() == n,
          "dataset row counts disagree");
  require(next_states.cols() == states.cols(), "state and next-state dims disagree");
  require(states.cols() > 0 && actions.cols() > 0, "state and action dims must be positive");
  require(states.allFinite() && actions.allFinite() && rewards.allFinite() &&
              next_states.allFinite(),
          "dataset contains non-finite values");
  require(trajectory_offsets.size() >= 2 && trajectory_offsets.front() == 0 &&
              trajectory_offsets.back() == n,
          "trajectory offsets do not cover the dataset");
  for (std::size_t k = 1; k < trajectory_offsets.size(); ++k) {
    const Index begin = trajectory_offsets[k - 1];
    const Index end = trajectory_offsets[k];
    require(end > begin, "empty trajectory");
    for (Index t = begin; t + 1 < end; ++t) {
      require(next_states.row(t) == states.row(t + 1),
              "trajectory is not contiguous at row " + std::to_string(t));
    }
  }
  if (reward_bound) {
    require(rewards.cwiseAbs().maxCoeff() <= *reward_bound, "reward exceeds declared bound");
  }
}

TransitionDataset TransitionDataset::select_rows(const std::vector<Index>& rows) const {
  TransitionDataset out;
  const Index m = static_cast<Index>(rows.size());
  out.states.resize(m, state_dim());
  out.actions.resize(m, action_dim());
  out.rewards.resize(m);
  out.next_states.resize(m, state_dim());
  out.trajectory_offsets.resize(rows.size() + 1);
  for (Index k = 0; k < m; ++k) {
    const Index r = rows[static_cast<std::size_t>(k)];
    require(r >= 0 && r < size(), "select_rows: index out of range");
    out.states.row(k) = states.row(r);
    out.actions.row(k) = actions.row(r);
    out.rewards(k) = rewards(r);
    out.next_states.row(k) = next_states.row(r);
    out.trajectory_offsets[static_cast<std::size_t>(k)] = k;
  }
  out.trajectory_offsets.back() = m;
  out.reward_bound = reward_bound;
  return out;
}

void BanditDataset::validate() const {
  const Index n = size();
  require(n > 0, "bandit dataset is empty");
  require(states.rows() == n && actions.rows() == n, "bandit dataset row counts disagree");
  require(states.cols() > 0 && actions.cols() > 0, "state and action dims must be positive");
  require(states.allFinite() && actions.allFinite() && rewards.allFinite(),
          "bandit dataset contains non-finite values");
}

TransitionDataset BanditDataset::as_transitions() const {
  validate();
  TransitionDataset out;
  out.states = states;
  out.actions = actions;
  out.rewards = rewards;
  out.next_states = states;
  out.trajectory_offsets.resize(static_cast<std::size_t>(size()) + 1);
  std::iota(out.trajectory_offsets.begin(), out.trajectory_offsets.end(), Index{0});
  return out;
}

TransitionDataset load_transitions(const std::string& path, const CsvSchema& schema) {
  require(!schema.state_columns.empty() && !schema.action_columns.empty(),
          "schema must name state and action columns");
  const CsvTable table = read_csv(path);
  const std::size_t traj_col = column_index(table.header, schema.trajectory_column);
  const std::size_t step_col = column_index(table.header, schema.step_column);
  const std::size_t reward_col = column_index(table.header, schema.reward_column);
  std::vector<std::size_t> state_cols, action_cols;
  for (const auto& c : schema.state_columns) state_cols.push_back(column_index(table.header, c));
  for (const auto& c : schema.action_columns) action_cols.push_back(column_index(table.header, c));

  struct Row {
    std::string traj;
    double step;
    Vector s, a;
    double r;
  };
  std::vector<Row> rows;
  rows.reserve(table.rows.size());
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& f = table.rows[k];
    const std::size_t line = table.line_numbers[k];
    Row row;
    row.traj = f[traj_col];
    row.step = parse_double(f[step_col], line, schema.step_column);
    row.s.resize(static_cast<Index>(state_cols.size()));
    row.a.resize(static_cast<Index>(action_cols.size()));
    for (std::size_t j = 0; j < state_cols.size(); ++j) {
      row.s(static_cast<Index>(j)) = parse_double(f[state_cols[j]], line, schema.state_columns[j]);
    }
    for (std::size_t j = 0; j < action_cols.size(); ++j) {
      row.a(static_cast<Index>(j)) =
          parse_double(f[action_cols[j]], line, schema.action_columns[j]);
    }
    row.r = parse_double(f[reward_col], line, schema.reward_column);
    rows.push_back(std::move(row));
  }

  // Trajectory ids sort numerically when every id parses as a number.
  bool numeric_ids = true;
  std::map<std::string, double> id_value;
  for (const auto& row : rows) {
    double v = 0.0;
    const auto [ptr, ec] =
        std::from_chars(row.traj.data(), row.traj.data() + row.traj.size(), v);
    if (ec != std::errc() || ptr != row.traj.data() + row.traj.size()) numeric_ids = false;
    id_value[row.traj] = v;
  }
  std::stable_sort(rows.begin(), rows.end(), [&](const Row& x, const Row& y) {
    if (x.traj != y.traj) {
      return numeric_ids ? id_value[x.traj] < id_value[y.traj] : x.traj < y.traj;
    }
    return x.step < y.step;
  });

  TransitionDataset out;
  std::vector<Index> picked;
  std::vector<Index> successor;
  std::size_t begin = 0;
  while (begin < rows.size()) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].traj == rows[begin].traj) ++end;
    if (end - begin >= 2) {
      for (std::size_t k = begin; k + 1 < end; ++k) {
        picked.push_back(static_cast<Index>(k));
        successor.push_back(static_cast<Index>(k + 1));
      }
      out.trajectory_offsets.push_back(static_cast<Index>(picked.size()));
    }
    begin = end;
  }
  require(!picked.empty(), "'" + path + "' has no trajectory with at least two rows");

  const Index n = static_cast<Index>(picked.size());
  const Index ds = static_cast<Index>(state_cols.size());
  const Index da = static_cast<Index>(action_cols.size());
  out.states.resize(n, ds);
  out.actions.resize(n, da);
  out.rewards.resize(n);
  out.next_states.resize(n, ds);
  for (Index k = 0; k < n; ++k) {
    const Row& row = rows[static_cast<std::size_t>(picked[static_cast<std::size_t>(k)])];
    const Row& next = rows[static_cast<std::size_t>(successor[static_cast<std::size_t>(k)])];
    out.states.row(k) = row.s.transpose();
    out.actions.row(k) = row.a.transpose();
    out.rewards(k) = row.r;
    out.next_states.row(k) = next.s.transpose();
  }
  out.validate();
  return out;
}

void save_transitions(const TransitionDataset& dataset, const std::string& path,
                      const CsvSchema& schema) {
  dataset.validate();
  require(static_cast<Index>(schema.state_columns.size()) == dataset.state_dim() &&
              static_cast<Index>(schema.action_columns.size()) == dataset.action_dim(),
          "schema dims do not match dataset");
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << schema.trajectory_column << ',' << schema.step_column;
  for (const auto& c : schema.state_columns) out << ',' << c;
  for (const auto& c : schema.action_columns) out << ',' << c;
  out << ',' << schema.reward_column << '\n';
  for (Index i = 0; i < dataset.num_trajectories(); ++i) {
    const Index begin = dataset.trajectory_offsets[static_cast<std::size_t>(i)];
    const Index end = dataset.trajectory_offsets[static_cast<std::size_t>(i) + 1];
    for (Index t = begin; t <= end; ++t) {
      const bool terminal = t == end;
      out << i << ',' << (t - begin);
      for (Index j = 0; j < dataset.state_dim(); ++j) {
        out << ',' << format17(terminal ? dataset.next_states(end - 1, j) : dataset.states(t, j));
      }
      for (Index j = 0; j < dataset.action_dim(); ++j) {
        out << ',' << format17(terminal ? 0.0 : dataset.actions(t, j));
      }
      out << ',' << format17(terminal ? 0.0 : dataset.rewards(t)) << '\n';
    }
  }
}

void LoanRecord::validate() const {
  require(term >= 1, "loan term must be at least one period");
  require(prime_rate > -1.0 && competitor_rate > -1.0, "rates must exceed -1");
  require(monthly_payment >= 0.0, "monthly payment must be nonnegative");
  require(std::isfinite(fico) && std::isfinite(loan_amount_approved) &&
              std::isfinite(monthly_payment) && std::isfinite(prime_rate) &&
              std::isfinite(competitor_rate),
          "loan record has non-finite fields");
}

double compute_loan_price(double payment, int term, double prime_rate, double loan_amount) {
  require(term >= 1, "compute_loan_price: term must be >= 1");
  require(prime_rate > -1.0, "compute_loan_price: prime rate must exceed -1");
  double annuity = 0.0;
  double discount = 1.0;
  for (int t = 1; t <= term; ++t) {
    discount /= (1.0 + prime_rate);
    annuity += discount;
  }
  return payment * annuity - loan_amount;
}

Vector FeatureStandardizer::apply(const VectorRef& raw) const {
  require(raw.size() == mean.size(), "standardizer: dimension mismatch");
  return (raw - mean).cwiseQuotient(scale);
}

Vector pricing_features(const LoanRecord& r) {
  Vector f(5);
  f << r.fico, r.loan_amount_approved, r.prime_rate, r.competitor_rate,
      static_cast<double>(r.term);
  return f;
}

PricingDataset build_pricing_dataset(const std::vector<LoanRecord>& records) {
  require(!records.empty(), "build_pricing_dataset: no records");
  std::vector<const LoanRecord*> kept;
  std::vector<double> prices;
  for (const auto& rec : records) {
    rec.validate();
    const double price =
        compute_loan_price(rec.monthly_payment, rec.term, rec.prime_rate, rec.loan_amount_approved);
    if (price > kPriceOutlierThreshold) continue;
    kept.push_back(&rec);
    prices.push_back(price);
  }
  require(!kept.empty(), "build_pricing_dataset: no records left after outlier filtering");

  const Index n = static_cast<Index>(kept.size());
  Matrix raw(n, 5);
  for (Index i = 0; i < n; ++i) raw.row(i) = pricing_features(*kept[static_cast<std::size_t>(i)]);

  PricingDataset out;
  out.input_records = static_cast<Index>(records.size());
  out.retained_records = n;
  out.standardizer.mean = raw.colwise().mean().transpose();
  out.standardizer.scale = Vector::Ones(5);
  if (n >= 2) {
    for (Index j = 0; j < 5; ++j) {
      const double var =
          (raw.col(j).array() - out.standardizer.mean(j)).square().sum() / static_cast<double>(n);
      if (var > 0.0) out.standardizer.scale(j) = std::sqrt(var);
    }
  }

  BanditDataset& data = out.data;
  data.states.resize(n, 6);
  data.actions.resize(n, 1);
  data.rewards.resize(n);
  for (Index i = 0; i < n; ++i) {
    data.states.row(i).head(5) = out.standardizer.apply(raw.row(i).transpose()).transpose();
    data.states(i, 5) = 1.0;
    const double price = prices[static_cast<std::size_t>(i)];
    data.actions(i, 0) = price;
    data.rewards(i) = kept[static_cast<std::size_t>(i)]->accepted ? price : 0.0;
  }
  return out;
}

std::vector<LoanRecord> load_loan_records(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::size_t c_fico = column_index(table.header, "fico");
  const std::size_t c_amount = column_index(table.header, "loan_amount_approved");
  const std::size_t c_prime = column_index(table.header, "prime_rate");
  const std::size_t c_comp = column_index(table.header, "competitor_rate");
  const std::size_t c_term = column_index(table.header, "term");
  const std::size_t c_payment = column_index(table.header, "monthly_payment");
  const std::size_t c_accepted = column_index(table.header, "accepted");
  std::vector<LoanRecord> out;
  out.reserve(table.rows.size());
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& f = table.rows[k];
    const std::size_t line = table.line_numbers[k];
    LoanRecord r;
    r.fico = parse_double(f[c_fico], line, "fico");
    r.loan_amount_approved = parse_double(f[c_amount], line, "loan_amount_approved");
    r.prime_rate = parse_double(f[c_prime], line, "prime_rate");
    r.competitor_rate = parse_double(f[c_comp], line, "competitor_rate");
    const double term = parse_double(f[c_term], line, "term");
    require(term == std::floor(term) && term >= 1,
            "row " + std::to_string(line) + ": term must be a positive integer");
    r.term = static_cast<int>(term);
    r.monthly_payment = parse_double(f[c_payment], line, "monthly_payment");
    r.accepted = parse_double(f[c_accepted], line, "accepted") != 0.0;
    r.validate();
    out.push_back(r);
  }
  return out;
}

void save_loan_records(const std::vector<LoanRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "fico,loan_amount_approved,prime_rate,competitor_rate,term,monthly_payment,accepted\n";
  for (const auto& r : records) {
    out << format17(r.fico) << ',' << format17(r.loan_amount_approved) << ','
        << format17(r.prime_rate) << ',' << format17(r.competitor_rate) << ',' << r.term << ','
        << format17(r.monthly_payment) << ',' << (r.accepted ? 1 : 0) << '\n';
  }
}

}  // namespace steel
