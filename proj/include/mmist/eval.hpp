#pragma once

// Sliced evaluation report (per-modality columns + all patients), plain-text
// and JSON rendering, and 2-component principal-axis projections of
// ground-truth / reconstructed / generated latent vectors.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmist/errors.hpp"
#include "mmist/metrics.hpp"
#include "mmist/mil.hpp"
#include "mmist/mmfv.hpp"
#include "mmist/recon.hpp"
#include "mmist/types.hpp"

namespace mmist::eval {

inline constexpr int kNumColumns = kNumModalities + 1;  // trailing AllPatients
inline constexpr std::array<const char*, kNumColumns> kColumnNames = {
    "CT", "MRI", "WSI", "ClinGen", "AllPatients"};

struct Cell {
    bool applicable = false;
    double bacc = 0.0;
    size_t count = 0;
};

struct Row {
    std::string name;
    std::array<Cell, kNumColumns> cells;
};

struct EvaluationReport {
    std::vector<Row> rows;
    std::array<size_t, kNumColumns> column_counts{};  // test patients per column
};

// A predictor maps a test patient to a binary prediction, or nothing when it
// cannot cover the patient (e.g. a baseline without its modality).
using Predictor = std::function<std::optional<int>(const PatientRecord&)>;

inline Cell make_cell(const std::vector<int>& preds, const std::vector<int>& labels) {
    Cell c;
    c.count = preds.size();
    if (!preds.empty()) {
        c.applicable = true;
        c.bacc = balanced_accuracy(preds, labels);
    }
    return c;
}

// One report row from a single fused predictor: each modality column is
// restricted to test patients possessing that modality.
inline Row sliced_row(const std::string& name, const Cohort& cohort, const Predictor& predict) {
    Row row;
    row.name = name;
    std::array<std::vector<int>, kNumColumns> preds, labels;
    for (const auto& p : cohort.patients) {
        if (p.split != Split::TEST) continue;
        const auto pred = predict(p);
        if (!pred) continue;
        const ModalityMask mask = modality_mask(p);
        for (Modality m : kAllModalities) {
            if (!mask[m]) continue;
            preds[int(m)].push_back(*pred);
            labels[int(m)].push_back(p.label_12mo);
        }
        preds[kNumColumns - 1].push_back(*pred);
        labels[kNumColumns - 1].push_back(p.label_12mo);
    }
    for (int c = 0; c < kNumColumns; ++c) row.cells[c] = make_cell(preds[c], labels[c]);
    return row;
}

// One report row from per-column predictors (MIL and Baselines rows, where
// each modality column holds an independent model and AllPatients is blank).
inline Row per_modality_row(const std::string& name, const Cohort& cohort,
                            const std::array<Predictor, kNumModalities>& predictors) {
    Row row;
    row.name = name;
    for (Modality m : kAllModalities) {
        std::vector<int> preds, labels;
        if (predictors[int(m)]) {
            for (const auto& p : cohort.patients) {
                if (p.split != Split::TEST || !modality_mask(p)[m]) continue;
                const auto pred = predictors[int(m)](p);
                if (!pred) continue;
                preds.push_back(*pred);
                labels.push_back(p.label_12mo);
            }
        }
        row.cells[int(m)] = make_cell(preds, labels);
    }
    row.cells[kNumColumns - 1] = Cell{};  // not applicable
    return row;
}

inline std::array<size_t, kNumColumns> column_counts(const Cohort& cohort) {
    std::array<size_t, kNumColumns> counts{};
    for (const auto& p : cohort.patients) {
        if (p.split != Split::TEST) continue;
        const ModalityMask mask = modality_mask(p);
        for (Modality m : kAllModalities)
            if (mask[m]) counts[int(m)]++;
        counts[kNumColumns - 1]++;
    }
    return counts;
}

inline std::string format_bacc(const Cell& c) {
    if (!c.applicable) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * c.bacc;
    return os.str();
}

inline std::string render_text(const EvaluationReport& report) {
    size_t name_w = std::string("Experiment").size();
    for (const auto& r : report.rows) name_w = std::max(name_w, r.name.size());
    std::array<size_t, kNumColumns> col_w;
    for (int c = 0; c < kNumColumns; ++c) col_w[c] = std::string(kColumnNames[c]).size();
    std::vector<std::array<std::string, kNumColumns>> cells;
    for (const auto& r : report.rows) {
        std::array<std::string, kNumColumns> line;
        for (int c = 0; c < kNumColumns; ++c) {
            line[c] = format_bacc(r.cells[c]);
            col_w[c] = std::max(col_w[c], line[c].size());
        }
        cells.push_back(line);
    }
    std::ostringstream os;
    os << std::left << std::setw(int(name_w)) << "Experiment";
    for (int c = 0; c < kNumColumns; ++c)
        os << "  " << std::right << std::setw(int(col_w[c])) << kColumnNames[c];
    os << "\n";
    for (size_t r = 0; r < report.rows.size(); ++r) {
        os << std::left << std::setw(int(name_w)) << report.rows[r].name;
        for (int c = 0; c < kNumColumns; ++c)
            os << "  " << std::right << std::setw(int(col_w[c])) << cells[r][c];
        os << "\n";
    }
    os << std::left << std::setw(int(name_w)) << "n";
    for (int c = 0; c < kNumColumns; ++c)
        os << "  " << std::right << std::setw(int(col_w[c])) << report.column_counts[c];
    os << "\n";
    return os.str();
}

inline std::string to_json(const EvaluationReport& report) {
    std::ostringstream os;
    os << std::setprecision(12);
    os << "{\n  \"columns\": [";
    for (int c = 0; c < kNumColumns; ++c)
        os << (c ? ", " : "") << '"' << kColumnNames[c] << '"';
    os << "],\n  \"column_counts\": [";
    for (int c = 0; c < kNumColumns; ++c)
        os << (c ? ", " : "") << report.column_counts[c];
    os << "],\n  \"rows\": [\n";
    for (size_t r = 0; r < report.rows.size(); ++r) {
        const auto& row = report.rows[r];
        os << "    {\"name\": \"" << row.name << "\", \"cells\": {";
        bool first = true;
        for (int c = 0; c < kNumColumns; ++c) {
            os << (first ? "" : ", ") << '"' << kColumnNames[c] << "\": ";
            if (row.cells[c].applicable)
                os << "{\"bacc\": " << row.cells[c].bacc << ", \"count\": "
                   << row.cells[c].count << "}";
            else
                os << "null";
            first = false;
        }
        os << "}}" << (r + 1 < report.rows.size() ? "," : "") << "\n";
    }
    os << "  ]\n}\n";
    return os.str();
}

// --- latent projections -----------------------------------------------------

enum class PointKind { GroundTruth, Reconstructed, Generated };

inline const char* point_kind_name(PointKind k) {
    switch (k) {
        case PointKind::GroundTruth: return "ground_truth";
        case PointKind::Reconstructed: return "reconstructed";
        default: return "generated";
    }
}

struct ProjectionSet {
    std::vector<FeatureVector> vectors;               // raw latent vectors
    std::vector<PointKind> kinds;
    std::vector<std::array<double, 2>> points;        // 2-D coordinates
};

using ProjectionDump = std::array<ProjectionSet, kNumModalities>;

// 2-component principal-axis projection with a fixed sign convention: each
// component's largest-magnitude loading is positive.
inline std::vector<std::array<double, 2>> pca2(const std::vector<FeatureVector>& vectors) {
    if (vectors.size() < 3) throw InsufficientPoints("projection needs at least 3 points");
    const Eigen::Index d = Eigen::Index(vectors[0].size());
    const Eigen::Index n = Eigen::Index(vectors.size());
    Eigen::MatrixXd x(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        if (Eigen::Index(vectors[size_t(j)].size()) != d)
            throw DimMismatch("pca2: inconsistent point dimensions");
        for (Eigen::Index i = 0; i < d; ++i) x(i, j) = double(vectors[size_t(j)][size_t(i)]);
    }
    const Eigen::VectorXd mean = x.rowwise().mean();
    x.colwise() -= mean;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU);
    Eigen::MatrixXd basis = svd.matrixU().leftCols(std::min<Eigen::Index>(2, svd.matrixU().cols()));
    if (basis.cols() < 2) {
        basis.conservativeResize(d, 2);
        basis.col(1).setZero();
    }
    for (Eigen::Index c = 0; c < 2; ++c) {
        Eigen::Index imax = 0;
        basis.col(c).cwiseAbs().maxCoeff(&imax);
        if (basis(imax, c) < 0) basis.col(c) = -basis.col(c);
    }
    const Eigen::MatrixXd proj = basis.transpose() * x;
    std::vector<std::array<double, 2>> out(size_t(n), {0.0, 0.0});
    for (Eigen::Index j = 0; j < n; ++j) out[size_t(j)] = {proj(0, j), proj(1, j)};
    return out;
}

// For each modality: ground-truth vectors of present test patients, the
// model's reconstructions of those, and its generations for absent patients.
inline ProjectionDump project_latents(const recon::ReconModel& model, const Cohort& cohort,
                                      const mil::SelectionMap& selections) {
    ProjectionDump dump;
    for (const auto& p : cohort.patients) {
        if (p.split != Split::TEST) continue;
        const ModalityMask mask = modality_mask(p);
        std::array<const FeatureVector*, kNumModalities> feats{};
        for (Modality m : kAllModalities)
            if (mask[m]) feats[int(m)] = mil::selected_vector(p, m, selections);
        const auto out = recon::recon_forward(model, recon::assemble_input(feats, mask,
                                                                           cohort.modality_dims));
        for (Modality m : kAllModalities) {
            const int i = int(m);
            if (mask[m]) {
                dump[i].vectors.push_back(*feats[i]);
                dump[i].kinds.push_back(PointKind::GroundTruth);
                dump[i].vectors.push_back(out.vectors[i]);
                dump[i].kinds.push_back(PointKind::Reconstructed);
            } else {
                dump[i].vectors.push_back(out.vectors[i]);
                dump[i].kinds.push_back(PointKind::Generated);
            }
        }
    }
    for (Modality m : kAllModalities) dump[int(m)].points = pca2(dump[int(m)].vectors);
    return dump;
}

inline void write_projection_csv(const std::string& path, const ProjectionSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path);
    out << "x,y,provenance\n" << std::setprecision(12);
    for (size_t i = 0; i < set.points.size(); ++i)
        out << set.points[i][0] << ',' << set.points[i][1] << ','
            << point_kind_name(set.kinds[i]) << "\n";
}

// Raw latent vectors as one rank-2 tensor (rows = points) plus a provenance
// CSV aligned row-for-row.
inline void write_latents(const std::string& mmfv_path, const std::string& csv_path,
                          const ProjectionSet& set) {
    mmfv::Tensor t;
    const size_t n = set.vectors.size();
    const size_t d = n ? set.vectors[0].size() : 0;
    t.dims = {uint32_t(n), uint32_t(d)};
    t.data.reserve(n * d);
    for (const auto& v : set.vectors) t.data.insert(t.data.end(), v.begin(), v.end());
    mmfv::write(mmfv_path, t);
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw Error("cannot open " + csv_path);
    out << "row,provenance\n";
    for (size_t i = 0; i < n; ++i) out << i << ',' << point_kind_name(set.kinds[i]) << "\n";
}

} // namespace mmist::eval
