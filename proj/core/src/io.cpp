#include "netfact/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "netfact/exceptions.hpp"
#include "netfact/model.hpp"

namespace netfact {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void atomic_write_text(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("rename to " + path.string() + " failed: " + ec.message());
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_matrix_csv(const fs::path& path, const Matrix& m) {
    std::string out;
    out.reserve(static_cast<std::size_t>(m.size()) * 20);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_g17(m(i, j));
        }
        out += '\n';
    }
    atomic_write_text(path, out);
}

namespace {

std::string strip_cr(std::string line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    return line;
}

double parse_number(const std::string& field, const fs::path& file, int row, int col) {
    const char* begin = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw DataError("unparseable number in " + file.string() + " at row " +
                        std::to_string(row) + ", column " + std::to_string(col));
    return v;
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

Matrix read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open matrix file " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    int row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        std::vector<double> row(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j)
            row[j] = parse_number(fields[j], path, row_no, static_cast<int>(j) + 1);
        if (!rows.empty() && rows.front().size() != row.size())
            throw DataError("ragged row in " + path.string() + " at row " +
                            std::to_string(row_no));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("empty matrix file " + path.string());
    Matrix m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

void write_scores_csv(const fs::path& path, const std::vector<std::string>& ids,
                      const Vector& scores) {
    if (static_cast<Eigen::Index>(ids.size()) != scores.size())
        throw DataError("id and score counts differ");
    std::string out = "subject_id,score\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        out += ids[i] + ',' + format_g17(scores(static_cast<Eigen::Index>(i))) + '\n';
    atomic_write_text(path, out);
}

void read_scores_csv(const fs::path& path, std::vector<std::string>& ids, Vector& scores) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open scores file " + path.string());
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "subject_id,score")
        throw DataError("scores file " + path.string() +
                        " must start with header subject_id,score");
    ids.clear();
    std::vector<double> vals;
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        if (fields.size() != 2 || fields[0].empty())
            throw DataError("malformed scores row " + std::to_string(row_no) + " in " +
                            path.string());
        ids.push_back(fields[0]);
        vals.push_back(parse_number(fields[1], path, row_no, 2));
    }
    if (ids.empty()) throw DataError("scores file " + path.string() + " has no subjects");
    scores = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

void save_cohort(const fs::path& dir, const CohortDataset& data) {
    fs::create_directories(dir);
    const int n = data.n_subjects();
    if (data.subject_ids.size() != static_cast<std::size_t>(n))
        throw DataError("cohort is missing subject ids");
    for (int i = 0; i < n; ++i)
        write_matrix_csv(dir / (data.subject_ids[i] + ".csv"), data.gammas[i]);
    write_scores_csv(dir / "scores.csv", data.subject_ids, data.scores);
}

CohortDataset load_cohort(const fs::path& matrix_dir, const fs::path& scores_file,
                          bool deflate) {
    std::vector<std::string> ids;
    Vector scores;
    read_scores_csv(scores_file, ids, scores);
    std::map<std::string, double> by_id;  // sorted ids, duplicate detection
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!by_id.emplace(ids[i], scores(static_cast<Eigen::Index>(i))).second)
            throw DataError("duplicate subject id " + ids[i] + " in scores file");
    }
    CohortDataset data;
    data.scores.resize(static_cast<Eigen::Index>(by_id.size()));
    Eigen::Index pos = 0;
    for (const auto& [id, score] : by_id) {
        const fs::path file = matrix_dir / (id + ".csv");
        if (!fs::exists(file))
            throw DataError("matrix file missing for subject " + id + ": " + file.string());
        data.gammas.push_back(read_matrix_csv(file));
        data.subject_ids.push_back(id);
        data.scores(pos++) = score;
    }
    validate_dataset(data);
    if (deflate) deflate_first_eigenvector(data);
    return data;
}

namespace {

ordered_json hp_to_json(const HyperParams& hp) {
    ordered_json j;
    j["gamma"] = hp.gamma;
    j["lambda1"] = hp.lambda1;
    j["lambda2"] = hp.lambda2;
    j["lambda3"] = hp.lambda3;
    j["step_t"] = hp.step_t;
    j["K"] = hp.K;
    j["eta0"] = hp.eta0;
    j["eta_decay"] = hp.eta_decay;
    j["max_outer_iters"] = hp.max_outer_iters;
    j["tol_objective"] = hp.tol_objective;
    j["tol_constraint"] = hp.tol_constraint;
    j["rng_seed"] = hp.rng_seed;
    return j;
}

HyperParams hp_from_json(const ordered_json& j) {
    HyperParams hp;
    hp.gamma = j.at("gamma").get<double>();
    hp.lambda1 = j.at("lambda1").get<double>();
    hp.lambda2 = j.at("lambda2").get<double>();
    hp.lambda3 = j.at("lambda3").get<double>();
    hp.step_t = j.at("step_t").get<double>();
    hp.K = j.at("K").get<int>();
    hp.eta0 = j.at("eta0").get<double>();
    hp.eta_decay = j.at("eta_decay").get<double>();
    hp.max_outer_iters = j.at("max_outer_iters").get<int>();
    hp.tol_objective = j.at("tol_objective").get<double>();
    hp.tol_constraint = j.at("tol_constraint").get<double>();
    hp.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    return hp;
}

ordered_json matrix_to_json(const Matrix& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const ordered_json& j) {
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) throw DataError("empty matrix in checkpoint");
    const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j.at(static_cast<std::size_t>(i));
        if (static_cast<Eigen::Index>(row.size()) != cols)
            throw DataError("ragged matrix in checkpoint");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

}  // namespace

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
    if (!ck.model.B.allFinite() || !ck.model.C.allFinite() || !ck.model.w.allFinite())
        throw NumericalError("checkpoint model contains non-finite values");
    ordered_json j;
    j["format_version"] = "1";
    j["seed"] = ck.seed;
    j["iteration"] = ck.iteration;
    j["hyper"] = hp_to_json(ck.hp);
    ordered_json model;
    model["M"] = ck.model.n_nodes();
    model["K"] = ck.model.n_components();
    model["N"] = ck.model.n_subjects();
    model["B"] = matrix_to_json(ck.model.B);
    model["C"] = matrix_to_json(ck.model.C);
    ordered_json w = ordered_json::array();
    for (Eigen::Index i = 0; i < ck.model.w.size(); ++i) w.push_back(ck.model.w(i));
    model["w"] = std::move(w);
    j["model"] = std::move(model);
    atomic_write_text(path, j.dump(2) + "\n");
}

Checkpoint read_checkpoint(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("checkpoint parse error in " + path.string() + ": " + e.what());
    }
    if (j.at("format_version").get<std::string>() != "1")
        throw DataError("unsupported checkpoint format_version");
    Checkpoint ck;
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.iteration = j.at("iteration").get<int>();
    ck.hp = hp_from_json(j.at("hyper"));
    const auto& model = j.at("model");
    ck.model.B = matrix_from_json(model.at("B"));
    ck.model.C = matrix_from_json(model.at("C"));
    const auto& w = model.at("w");
    ck.model.w.resize(static_cast<Eigen::Index>(w.size()));
    for (Eigen::Index i = 0; i < ck.model.w.size(); ++i)
        ck.model.w(i) = w.at(static_cast<std::size_t>(i)).get<double>();
    if (ck.model.B.rows() != model.at("M").get<int>() ||
        ck.model.B.cols() != model.at("K").get<int>() ||
        ck.model.C.cols() != model.at("N").get<int>())
        throw DataError("checkpoint shape fields disagree with stored matrices");
    return ck;
}

void emit_report(const PredictionReport& report, const fs::path& json_path) {
    if (report.rows.empty()) throw DataError("refusing to emit an empty report");
    ordered_json j;
    ordered_json meta;
    meta["format_version"] = "1";
    meta["method"] = report.method;
    meta["fold_count"] = report.fold_count;
    std::map<std::string, const SubjectRow*> plot_pick;  // test-preferred row per subject
    for (const SubjectRow& row : report.rows) {
        auto [it, inserted] = plot_pick.emplace(row.subject_id, &row);
        if (!inserted && row.is_test && !it->second->is_test) it->second = &row;
    }
    meta["n_subjects"] = plot_pick.size();
    j["meta"] = std::move(meta);

    ordered_json subjects = ordered_json::array();
    for (const SubjectRow& row : report.rows) {
        ordered_json r;
        r["subject_id"] = row.subject_id;
        r["fold"] = row.fold;
        r["tag"] = row.is_test ? "test" : "train";
        r["y_true"] = row.y_true;
        if (row.missing)
            r["y_pred"] = nullptr;
        else
            r["y_pred"] = row.y_pred;
        subjects.push_back(std::move(r));
    }
    j["subjects"] = std::move(subjects);

    ordered_json agg;
    agg["rmse_train"] = report.rmse_train;
    agg["rmse_test"] = report.rmse_test;
    agg["r2_train"] = report.r2_train;
    agg["r2_test"] = report.r2_test;
    j["aggregates"] = std::move(agg);
    atomic_write_text(json_path, j.dump(2) + "\n");

    fs::path stem = json_path;
    stem.replace_extension();
    std::string subj_csv = "subject_id,fold,tag,y_true,y_pred\n";
    for (const SubjectRow& row : report.rows) {
        subj_csv += row.subject_id + ',' + std::to_string(row.fold) + ',' +
                    (row.is_test ? "test" : "train") + ',' + format_g17(row.y_true) + ',' +
                    (row.missing ? std::string() : format_g17(row.y_pred)) + '\n';
    }
    atomic_write_text(stem.string() + "_subjects.csv", subj_csv);

    std::string plot_csv = "subject_id,y_true,y_pred,tag\n";
    for (const auto& [id, row] : plot_pick) {
        plot_csv += id + ',' + format_g17(row->y_true) + ',' +
                    (row->missing ? std::string() : format_g17(row->y_pred)) + ',' +
                    (row->is_test ? "test" : "train") + '\n';
    }
    atomic_write_text(stem.string() + "_plot.csv", plot_csv);
}

void write_trace_csv(const fs::path& path, const TrainTrace& trace) {
    std::string out =
        "iter,aug_step1,aug_step2,aug_step3,aug_end,plain,fit_term,residual,b_l1,eta,"
        "step1_increase,step1_halvings\n";
    for (const TraceRow& r : trace.rows) {
        out += std::to_string(r.iter) + ',' + format_g17(r.aug_step1) + ',' +
               format_g17(r.aug_step2) + ',' + format_g17(r.aug_step3) + ',' +
               format_g17(r.aug_end) + ',' + format_g17(r.plain) + ',' +
               format_g17(r.fit_term) + ',' + format_g17(r.residual) + ',' +
               format_g17(r.b_l1) + ',' + format_g17(r.eta) + ',' +
               format_g17(r.step1_increase) + ',' + std::to_string(r.step1_halvings) +
               '\n';
    }
    atomic_write_text(path, out);
}

void write_sweep(const SweepResult& result, const fs::path& dir) {
    fs::create_directories(dir);
    std::string grid = "sigma_gamma/sparsity";
    for (double sp : result.sparsity_grid) grid += ',' + format_g17(sp);
    grid += '\n';
    for (std::size_t i = 0; i < result.sigma_grid.size(); ++i) {
        grid += format_g17(result.sigma_grid[i]);
        for (std::size_t jj = 0; jj < result.sparsity_grid.size(); ++jj)
            grid += ',' + format_g17(result.cells[i][jj].mean_similarity);
        grid += '\n';
    }
    atomic_write_text(dir / "sweep_grid.csv", grid);

    ordered_json j;
    j["format_version"] = "1";
    j["sigma_grid"] = result.sigma_grid;
    j["sparsity_grid"] = result.sparsity_grid;
    ordered_json cells = ordered_json::array();
    for (const auto& row : result.cells) {
        for (const SweepCell& cell : row) {
            ordered_json c;
            c["sigma_gamma"] = cell.sigma_gamma;
            c["sparsity"] = cell.sparsity;
            if (std::isfinite(cell.mean_similarity)) {
                c["mean"] = cell.mean_similarity;
                c["std"] = cell.std_similarity;
            } else {
                c["mean"] = nullptr;
                c["std"] = nullptr;
            }
            c["failed"] = cell.failed;
            ordered_json trials = ordered_json::array();
            for (double t : cell.trial_similarities) {
                if (std::isfinite(t))
                    trials.push_back(t);
                else
                    trials.push_back(nullptr);
            }
            c["trials"] = std::move(trials);
            cells.push_back(std::move(c));
        }
    }
    j["cells"] = std::move(cells);
    atomic_write_text(dir / "sweep_summary.json", j.dump(2) + "\n");
}

}  // namespace netfact
