#pragma once

// Manifest-driven cohort loading.
//
// manifest.csv columns: patient_id,split,label_12mo,modality,instance_id,feature_path
// tabular.csv columns:  patient_id,variable,value   (sibling of the manifest)
//
// Feature paths are relative to feature_root. Patients are assembled in
// first-appearance order and bags in row order, so a manifest always loads
// to the same in-memory cohort.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmist/errors.hpp"
#include "mmist/mmfv.hpp"
#include "mmist/tabular.hpp"
#include "mmist/types.hpp"

namespace mmist {

inline constexpr std::array<size_t, kNumModalities> kModalityDims = {
    512, 512, 2048, tabular::kClingenDim};

inline constexpr const char* kManifestHeader =
    "patient_id,split,label_12mo,modality,instance_id,feature_path";
inline constexpr const char* kTabularHeader = "patient_id,variable,value";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                                      const char* expected_header,
                                                      size_t n_cols) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("empty csv: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header)
        throw Error("bad header in " + path.string() + ": got '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != n_cols)
            throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(n_cols) + " columns, got " + std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    return rows;
}

} // namespace detail

inline Cohort load_cohort(const std::filesystem::path& manifest_path,
                          const std::filesystem::path& feature_root) {
    Cohort cohort;
    cohort.modality_dims = kModalityDims;

    std::map<std::string, size_t> index;  // patient_id -> position
    std::vector<std::set<std::string>> seen_ids;  // per patient, "modality/instance_id"

    for (const auto& row : detail::read_csv(manifest_path, kManifestHeader, 6)) {
        const std::string& pid = row[0];
        const std::string& split_s = row[1];
        const std::string& label_s = row[2];
        const Modality mod = modality_from_name(row[3]);
        const std::string& instance_id = row[4];
        const std::filesystem::path fpath = feature_root / row[5];

        auto [it, inserted] = index.emplace(pid, cohort.patients.size());
        if (inserted) {
            PatientRecord p;
            p.patient_id = pid;
            if (split_s == "train") p.split = Split::TRAIN;
            else if (split_s == "test") p.split = Split::TEST;
            else throw Error("bad split '" + split_s + "' for patient " + pid);
            if (label_s == "0") p.label_12mo = 0;
            else if (label_s == "1") p.label_12mo = 1;
            else throw Error("bad label '" + label_s + "' for patient " + pid);
            cohort.patients.push_back(std::move(p));
            seen_ids.emplace_back();
        }
        PatientRecord& p = cohort.patients[it->second];

        if (!seen_ids[it->second].insert(row[3] + "/" + instance_id).second)
            throw DuplicateInstanceId("patient " + pid + ": duplicate instance '" + instance_id +
                                      "' in modality " + row[3]);

        if (!std::filesystem::exists(fpath))
            throw MissingFeatureFile("missing feature file: " + fpath.string());
        FeatureVector v = read_feature_file(fpath);
        const size_t expected = cohort.dim(mod);
        if (v.size() != expected)
            throw DimensionMismatch(fpath.string() + ": expected " + std::to_string(expected) +
                                    ", found " + std::to_string(v.size()));

        auto& bag = p.bag(mod);
        if (!bag) bag = FeatureBag{mod, {}, {}};
        bag->instances.push_back(std::move(v));
        bag->instance_ids.push_back(instance_id);
    }

    // Sibling tabular file is optional for purely synthetic clingen cohorts.
    const auto tabular_path = manifest_path.parent_path() / "tabular.csv";
    if (std::filesystem::exists(tabular_path)) {
        for (const auto& row : detail::read_csv(tabular_path, kTabularHeader, 3)) {
            const auto it = index.find(row[0]);
            if (it == index.end())
                throw Error("tabular.csv references unknown patient " + row[0]);
            PatientRecord& p = cohort.patients[it->second];
            if (tabular::is_gene(row[1])) {
                if (!p.genomics_raw) p.genomics_raw.emplace();
                (*p.genomics_raw)[row[1]] = row[2];
            } else {
                p.clinical_raw[row[1]] = row[2];
            }
        }
    }

    for (const auto& p : cohort.patients)
        if (!p.bag(Modality::WSI))
            throw Error("patient " + p.patient_id + " has no WSI bag");

    return cohort;
}

// Fills the CLINGEN bag from tabular fields for patients that did not get
// one from the manifest (synthetic cohorts ship it pre-encoded).
inline void encode_cohort_clingen(Cohort& cohort) {
    for (auto& p : cohort.patients) {
        if (p.bag(Modality::CLINGEN)) continue;
        FeatureBag bag;
        bag.modality = Modality::CLINGEN;
        bag.instances.push_back(tabular::encode_clingen(p.clinical_raw, p.genomics_raw));
        bag.instance_ids.push_back("clingen");
        p.bag(Modality::CLINGEN) = std::move(bag);
    }
}

} // namespace mmist
