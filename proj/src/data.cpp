#include "pmia/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "pmia/error.hpp"
#include "pmia/numerics.hpp"

namespace pmia {

// ---------------------------------------------------------------------------
// QMatrix / Dataset
// ---------------------------------------------------------------------------

QMatrix::QMatrix(std::size_t n_questions, std::size_t n_kcs)
    : n_questions_(n_questions), n_kcs_(n_kcs), entries_(n_questions * n_kcs, 0) {}

double QMatrix::density() const {
  if (entries_.empty()) return 0.0;
  return static_cast<double>(std::count(entries_.begin(), entries_.end(), 1)) / static_cast<double>(entries_.size());
}

void QMatrix::validate() const {
  if (n_questions_ == 0 || n_kcs_ == 0) throw ValidationError("Q-matrix is empty");
  for (std::size_t j = 0; j < n_questions_; ++j) {
    auto r = row(j);
    if (std::none_of(r.begin(), r.end(), [](std::uint8_t v) { return v != 0; }))
      throw ValidationError("Q-matrix row for question " + std::to_string(j) + " has no KC");
  }
}

void Dataset::validate() const {
  q_matrix.validate();
  if (static_cast<int>(q_matrix.n_questions()) != n_questions || static_cast<int>(q_matrix.n_kcs()) != n_kcs)
    throw ValidationError("dataset counts disagree with Q-matrix shape");
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n_students) * n_questions, 0);
  for (const auto& r : records) {
    if (r.student < 0 || r.student >= n_students)
      throw ValidationError("student_id " + std::to_string(r.student) + " out of range");
    if (r.question < 0 || r.question >= n_questions)
      throw ValidationError("question_id " + std::to_string(r.question) + " out of range");
    if (r.response != 0 && r.response != 1) throw ValidationError("response must be 0 or 1");
    auto& flag = seen[static_cast<std::size_t>(r.student) * n_questions + r.question];
    if (flag)
      throw ValidationError("duplicate record for student " + std::to_string(r.student) + ", question " +
                            std::to_string(r.question));
    flag = 1;
  }
}

Dataset make_dataset(std::vector<InteractionRecord> records, QMatrix q_matrix) {
  Dataset d;
  d.n_questions = static_cast<int>(q_matrix.n_questions());
  d.n_kcs = static_cast<int>(q_matrix.n_kcs());
  int max_student = -1;
  for (const auto& r : records) max_student = std::max(max_student, r.student);
  d.n_students = max_student + 1;
  d.records = std::move(records);
  d.q_matrix = std::move(q_matrix);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
  }
  return fields;
}

int parse_int(std::string_view field, long line, const char* what) {
  int value = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty())
    throw ParseError(std::string("invalid ") + what + " '" + std::string(field) + "'", line);
  return value;
}

bool next_line(std::istream& in, std::string& line, long& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) return true;
  }
  return false;
}

}  // namespace

std::vector<InteractionRecord> read_records_csv(std::istream& in) {
  std::string line;
  long line_no = 0;
  if (!next_line(in, line, line_no)) throw ParseError("records file is empty", 1);
  if (line != "student_id,question_id,response")
    throw ParseError("expected header 'student_id,question_id,response'", line_no);
  std::vector<InteractionRecord> records;
  while (next_line(in, line, line_no)) {
    const auto f = split_fields(line);
    if (f.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(f.size()), line_no);
    InteractionRecord r{parse_int(f[0], line_no, "student_id"), parse_int(f[1], line_no, "question_id"),
                        parse_int(f[2], line_no, "response")};
    if (r.student < 0 || r.question < 0) throw ParseError("ids must be nonnegative", line_no);
    if (r.response != 0 && r.response != 1)
      throw ParseError("response must be 0 or 1, got " + std::to_string(r.response), line_no);
    records.push_back(r);
  }
  return records;
}

QMatrix read_qmatrix_csv(std::istream& in) {
  std::string line;
  long line_no = 0;
  if (!next_line(in, line, line_no)) throw ParseError("Q-matrix file is empty", 1);
  const auto header = split_fields(line);
  if (header.size() < 2 || header[0] != "question_id") throw ParseError("expected header 'question_id,kc_0,...'", line_no);
  const std::size_t k = header.size() - 1;
  for (std::size_t i = 0; i < k; ++i)
    if (header[i + 1] != "kc_" + std::to_string(i))
      throw ParseError("expected column 'kc_" + std::to_string(i) + "'", line_no);

  std::vector<std::pair<int, std::vector<std::uint8_t>>> rows;
  while (next_line(in, line, line_no)) {
    const auto f = split_fields(line);
    if (f.size() != k + 1) throw ParseError("expected " + std::to_string(k + 1) + " fields", line_no);
    const int q = parse_int(f[0], line_no, "question_id");
    if (q < 0) throw ParseError("question_id must be nonnegative", line_no);
    std::vector<std::uint8_t> cells(k);
    for (std::size_t c = 0; c < k; ++c) {
      const int v = parse_int(f[c + 1], line_no, "Q-matrix cell");
      if (v != 0 && v != 1) throw ParseError("Q-matrix cells must be 0 or 1", line_no);
      cells[c] = static_cast<std::uint8_t>(v);
    }
    rows.emplace_back(q, std::move(cells));
  }
  if (rows.empty()) throw ValidationError("Q-matrix has no rows");
  QMatrix qm(rows.size(), k);
  std::vector<bool> filled(rows.size(), false);
  for (const auto& [q, cells] : rows) {
    if (static_cast<std::size_t>(q) >= rows.size())
      throw ValidationError("Q-matrix question ids must be 0..J-1 (got " + std::to_string(q) + ")");
    if (filled[q]) throw ValidationError("duplicate Q-matrix row for question " + std::to_string(q));
    filled[q] = true;
    for (std::size_t c = 0; c < k; ++c) qm.set(q, c, cells[c] != 0);
  }
  qm.validate();
  return qm;
}

void write_records_csv(std::ostream& out, std::span<const InteractionRecord> records) {
  out << "student_id,question_id,response\n";
  for (const auto& r : records) out << r.student << ',' << r.question << ',' << r.response << '\n';
}

void write_qmatrix_csv(std::ostream& out, const QMatrix& q) {
  out << "question_id";
  for (std::size_t k = 0; k < q.n_kcs(); ++k) out << ",kc_" << k;
  out << '\n';
  for (std::size_t j = 0; j < q.n_questions(); ++j) {
    out << j;
    for (std::size_t k = 0; k < q.n_kcs(); ++k) out << ',' << (q.at(j, k) ? 1 : 0);
    out << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& records_path, const std::filesystem::path& qmatrix_path) {
  std::ifstream rin(records_path);
  if (!rin) throw IoError("cannot open records file " + records_path.string());
  std::ifstream qin(qmatrix_path);
  if (!qin) throw IoError("cannot open Q-matrix file " + qmatrix_path.string());
  auto q = read_qmatrix_csv(qin);
  auto records = read_records_csv(rin);
  return make_dataset(std::move(records), std::move(q));
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& records_path,
                   const std::filesystem::path& qmatrix_path) {
  std::ofstream rout(records_path);
  if (!rout) throw IoError("cannot write " + records_path.string());
  write_records_csv(rout, dataset.records);
  std::ofstream qout(qmatrix_path);
  if (!qout) throw IoError("cannot write " + qmatrix_path.string());
  write_qmatrix_csv(qout, dataset.q_matrix);
}

// ---------------------------------------------------------------------------
// Synthetic
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (n_students < 1 || n_questions < 1 || n_kcs < 1) throw ConfigError("synthetic: counts must be >= 1");
  if (!(slip >= 0.0 && slip <= 1.0) || !(guess >= 0.0 && guess <= 1.0))
    throw ConfigError("synthetic: slip and guess must lie in [0, 1]");
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("synthetic: density must lie in (0, 1]");
}

bool SyntheticData::eta(int student, int question) const {
  const auto row = dataset.q_matrix.row(static_cast<std::size_t>(question));
  for (int k = 0; k < dataset.n_kcs; ++k)
    if (row[k] && !masters(student, k)) return false;
  return true;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Rng root(spec.seed, 0x5e7);
  const int S = spec.n_students, J = spec.n_questions, K = spec.n_kcs;

  QMatrix q(J, K);
  Rng qrng = root.derive("qmatrix");
  for (int j = 0; j < J; ++j) {
    bool any = false;
    for (int k = 0; k < K; ++k) {
      const bool on = qrng.bernoulli(spec.density);
      q.set(j, k, on);
      any = any || on;
    }
    if (!any) q.set(j, static_cast<std::size_t>(qrng.below(K)), true);
  }

  SyntheticData out;
  out.mastery.assign(static_cast<std::size_t>(S) * K, 0);
  Rng mrng = root.derive("mastery");
  std::vector<double> kc_difficulty(K);
  for (auto& d : kc_difficulty) d = 0.5 * mrng.normal();
  for (int s = 0; s < S; ++s) {
    const double ability = mrng.normal();
    for (int k = 0; k < K; ++k)
      out.mastery[static_cast<std::size_t>(s) * K + k] = mrng.bernoulli(sigmoid(1.7 * (ability - kc_difficulty[k]))) ? 1 : 0;
  }

  std::vector<InteractionRecord> records;
  records.reserve(static_cast<std::size_t>(S) * J);
  out.dataset.q_matrix = q;
  out.dataset.n_kcs = K;
  Rng rrng = root.derive("responses");
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < J; ++j) {
      const double p = out.eta(s, j) ? 1.0 - spec.slip : spec.guess;
      records.push_back({s, j, rrng.bernoulli(p) ? 1 : 0});
    }
  out.dataset = make_dataset(std::move(records), std::move(q));
  return out;
}

// ---------------------------------------------------------------------------
// Partition
// ---------------------------------------------------------------------------

std::vector<std::size_t> SplitPlan::indices(std::span<const int> students, SplitPart part) const {
  std::vector<std::size_t> out;
  for (int s : students) {
    auto it = per_student.find(s);
    if (it == per_student.end()) continue;
    const auto& sp = it->second;
    auto append = [&](const std::vector<std::size_t>& v) { out.insert(out.end(), v.begin(), v.end()); };
    switch (part) {
      case SplitPart::Train: append(sp.train); break;
      case SplitPart::Valid: append(sp.valid); break;
      case SplitPart::Test: append(sp.test); break;
      case SplitPart::All:
        append(sp.train);
        append(sp.valid);
        append(sp.test);
        break;
    }
  }
  return out;
}

std::vector<InteractionRecord> SplitPlan::records(const Dataset& dataset, std::span<const int> students,
                                                  SplitPart part) const {
  std::vector<InteractionRecord> out;
  for (std::size_t i : indices(students, part)) out.push_back(dataset.records.at(i));
  return out;
}

std::vector<int> merge_students(std::span<const int> a, std::span<const int> b) {
  std::vector<int> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SplitPlan partition_students(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("forgetting ratio must lie in (0, 1)");
  const int S = dataset.n_students;
  const long n = std::lround(ratio * S);
  if (n < 1) throw ConfigError("forgetting ratio too small: round(ratio * S) must be >= 1");
  if (3 * n > S)
    throw ConfigError("forgetting ratio too large: 3 * " + std::to_string(n) + " non-retain students exceed S = " +
                      std::to_string(S));

  SplitPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  const Rng root(seed, 0x5917);

  std::vector<int> students(S);
  for (int s = 0; s < S; ++s) students[s] = s;
  Rng srng = root.derive("students");
  srng.shuffle(students);
  auto take = [&](std::size_t lo, std::size_t hi) {
    std::vector<int> v(students.begin() + static_cast<long>(lo), students.begin() + static_cast<long>(hi));
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto un = static_cast<std::size_t>(n);
  plan.forget = take(0, un);
  plan.nonmember_train = take(un, 2 * un);
  plan.nonmember_eval = take(2 * un, 3 * un);
  plan.retain = take(3 * un, static_cast<std::size_t>(S));

  std::vector<std::vector<std::size_t>> by_student(S);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) by_student[dataset.records[i].student].push_back(i);
  for (int s = 0; s < S; ++s) {
    auto idx = by_student[s];
    if (idx.empty()) continue;
    Rng r = root.derive(0x10000 + static_cast<std::uint64_t>(s));
    r.shuffle(idx);
    const std::size_t m = idx.size();
    const auto n_test = static_cast<std::size_t>(std::lround((1.0 - kTrainFraction - kValidFraction) * m));
    const auto n_valid = static_cast<std::size_t>(std::lround(kValidFraction * m));
    const std::size_t n_train = m - std::min(m, n_test + n_valid);
    StudentSplit sp;
    sp.train.assign(idx.begin(), idx.begin() + static_cast<long>(n_train));
    sp.valid.assign(idx.begin() + static_cast<long>(n_train),
                    idx.begin() + static_cast<long>(std::min(m, n_train + n_valid)));
    sp.test.assign(idx.begin() + static_cast<long>(std::min(m, n_train + n_valid)), idx.end());
    plan.per_student.emplace(s, std::move(sp));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

nlohmann::json splitplan_to_json(const SplitPlan& plan) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [s, sp] : plan.per_student)
    per[std::to_string(s)] = {{"train", sp.train}, {"valid", sp.valid}, {"test", sp.test}};
  return {{"format", "splitplan/1"},
          {"ratio", plan.ratio},
          {"seed", plan.seed},
          {"retain_students", plan.retain},
          {"forget_students", plan.forget},
          {"nonmember_train_students", plan.nonmember_train},
          {"nonmember_eval_students", plan.nonmember_eval},
          {"per_student_splits", per}};
}

SplitPlan splitplan_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "splitplan/1") throw ParseError("unsupported split plan format");
    SplitPlan plan;
    plan.ratio = j.at("ratio").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.retain = j.at("retain_students").get<std::vector<int>>();
    plan.forget = j.at("forget_students").get<std::vector<int>>();
    plan.nonmember_train = j.at("nonmember_train_students").get<std::vector<int>>();
    plan.nonmember_eval = j.at("nonmember_eval_students").get<std::vector<int>>();
    for (const auto& [key, v] : j.at("per_student_splits").items()) {
      StudentSplit sp{v.at("train").get<std::vector<std::size_t>>(), v.at("valid").get<std::vector<std::size_t>>(),
                      v.at("test").get<std::vector<std::size_t>>()};
      plan.per_student.emplace(std::stoi(key), std::move(sp));
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("split plan: ") + e.what());
  }
}

}  // namespace pmia
