#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

namespace pmia {

struct InteractionRecord {
  int student = 0;
  int question = 0;
  int response = 0;  // exactly 0 or 1

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

/// Binary exercise x knowledge-component matrix; every row requires at
/// least one KC.
class QMatrix {
 public:
  QMatrix() = default;
  QMatrix(std::size_t n_questions, std::size_t n_kcs);

  std::size_t n_questions() const { return n_questions_; }
  std::size_t n_kcs() const { return n_kcs_; }
  bool at(std::size_t question, std::size_t kc) const { return entries_[question * n_kcs_ + kc] != 0; }
  void set(std::size_t question, std::size_t kc, bool value) { entries_[question * n_kcs_ + kc] = value ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t question) const {
    return {entries_.data() + question * n_kcs_, n_kcs_};
  }
  double density() const;

  /// Throws ValidationError when a row is empty.
  void validate() const;

  friend bool operator==(const QMatrix&, const QMatrix&) = default;

 private:
  std::size_t n_questions_ = 0;
  std::size_t n_kcs_ = 0;
  std::vector<std::uint8_t> entries_;
};

struct Dataset {
  std::vector<InteractionRecord> records;
  QMatrix q_matrix;
  int n_students = 0;
  int n_questions = 0;
  int n_kcs = 0;

  /// Checks id ranges, binary responses, Q-matrix rows and duplicate
  /// (student, question) pairs.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Derives counts from content (S = max student id + 1, J and K from the
/// Q-matrix) and validates.
Dataset make_dataset(std::vector<InteractionRecord> records, QMatrix q_matrix);

std::vector<InteractionRecord> read_records_csv(std::istream& in);
QMatrix read_qmatrix_csv(std::istream& in);
void write_records_csv(std::ostream& out, std::span<const InteractionRecord> records);
void write_qmatrix_csv(std::ostream& out, const QMatrix& q);

Dataset load_dataset(const std::filesystem::path& records_path, const std::filesystem::path& qmatrix_path);
void write_dataset(const Dataset& dataset, const std::filesystem::path& records_path,
                   const std::filesystem::path& qmatrix_path);

// ---------------------------------------------------------------------------
// Synthetic DINA data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int n_students = 536;
  int n_questions = 20;
  int n_kcs = 8;
  double slip = 0.1;
  double guess = 0.2;
  double density = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  /// S x K row-major 0/1 ground-truth mastery.
  std::vector<std::uint8_t> mastery;

  bool masters(int student, int kc) const {
    return mastery[static_cast<std::size_t>(student) * dataset.n_kcs + kc] != 0;
  }
  /// DINA conjunction: student masters every KC the question requires.
  bool eta(int student, int question) const;
};

/// Every student answers every question. Mastery is drawn from a
/// one-factor logistic model (correlated skills); responses follow DINA:
/// correct with prob 1 - slip when eta = 1, otherwise with prob guess.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Student-level partition
// ---------------------------------------------------------------------------

struct StudentSplit {
  std::vector<std::size_t> train;  // indices into Dataset::records
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;

  friend bool operator==(const StudentSplit&, const StudentSplit&) = default;
};

enum class SplitPart { Train, Valid, Test, All };

struct SplitPlan {
  std::vector<int> retain;  // all sets sorted ascending
  std::vector<int> forget;
  std::vector<int> nonmember_train;
  std::vector<int> nonmember_eval;
  std::map<int, StudentSplit> per_student;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  /// Record indices of `part` for every student in `students`, in student
  /// order then split order.
  std::vector<std::size_t> indices(std::span<const int> students, SplitPart part) const;
  std::vector<InteractionRecord> records(const Dataset& dataset, std::span<const int> students,
                                         SplitPart part) const;

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

inline constexpr double kTrainFraction = 0.7;
inline constexpr double kValidFraction = 0.1;

/// |S_f| = |S_nm_train| = |S_nm_eval| = round(ratio * S); the rest retain.
/// Each student's records are shuffled and split 70/10/20.
SplitPlan partition_students(const Dataset& dataset, double ratio, std::uint64_t seed);

/// Sorted union of two student sets.
std::vector<int> merge_students(std::span<const int> a, std::span<const int> b);

nlohmann::json splitplan_to_json(const SplitPlan& plan);
SplitPlan splitplan_from_json(const nlohmann::json& j);

}  // namespace pmia
