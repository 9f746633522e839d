#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "netfact/predict.hpp"
#include "netfact/synthetic.hpp"
#include "netfact/trainer.hpp"
#include "netfact/types.hpp"

namespace netfact {

// All writers go through a temp-file + rename so partially written files are
// never observed under the target name.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

// Shortest form with 17 significant digits; round-trips doubles exactly.
std::string format_g17(double v);

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

// Header `subject_id,score`.
void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& ids, const Vector& scores);
void read_scores_csv(const std::filesystem::path& path, std::vector<std::string>& ids,
                     Vector& scores);

// One `<subject_id>.csv` per subject plus `scores.csv`.
void save_cohort(const std::filesystem::path& dir, const CohortDataset& data);

// Subjects ordered by sorted id from the scores file; validates, optionally
// removes the leading eigenvector component from every matrix.
CohortDataset load_cohort(const std::filesystem::path& matrix_dir,
                          const std::filesystem::path& scores_file, bool deflate);

struct Checkpoint {
    FactorModel model;
    HyperParams hp;
    std::uint64_t seed = 0;
    int iteration = 0;
};

// JSON, bitwise-lossless for every numeric field.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Writes <path> (JSON with meta/subjects/aggregates), a sibling
// <stem>_subjects.csv of all rows, and <stem>_plot.csv with one
// test-preferred row per subject.
void emit_report(const PredictionReport& report, const std::filesystem::path& json_path);

void write_trace_csv(const std::filesystem::path& path, const TrainTrace& trace);

// sweep_grid.csv (means, sigma rows x sparsity columns) and
// sweep_summary.json (per-cell mean/std/trials) under dir.
void write_sweep(const SweepResult& result, const std::filesystem::path& dir);

}  // namespace netfact
