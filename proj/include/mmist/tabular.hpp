#pragma once

// Clinical + genomics encoding into the fixed-order CLINGEN feature vector.
// Ordinal variables map to rank/(levels-1) in [0,1], with -1 as the
// "unknown" sentinel; categorical variables are one-hot with a trailing
// unknown slot. The variable order is part of the schema contract.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmist/errors.hpp"
#include "mmist/types.hpp"

namespace mmist::tabular {

inline constexpr const char* kSchemaVersion = "clingen-schema-v1";
inline constexpr const char* kUnknown = "unknown";

struct VariableSchema {
    std::string name;
    std::vector<std::string> levels;  // ordered for ordinals
    bool ordinal = false;
};

// The 11 clinical variables (6 ordinal + 4 categorical + age bucket)
// followed by the 3 genes. T uses the 11-level AJCC grading; age is
// bucketed by decade over 0-109.
inline const std::vector<VariableSchema>& schema() {
    static const std::vector<VariableSchema> s = {
        {"t", {"t0", "t1", "t1a", "t1b", "t2", "t2a", "t2b", "t3", "t3a", "t3b", "t4"}, true},
        {"n", {"n0", "n1", "n2"}, true},
        {"m", {"m0", "m1", "m2"}, true},
        {"mp", {"mp0", "mp1", "mp2"}, true},
        {"ajcc_stage", {"stage_i", "stage_ii", "stage_iii", "stage_iv"}, true},
        {"grade", {"g1", "g2", "g3", "g4", "g5"}, true},
        {"gender", {"male", "female"}, false},
        {"cancer_history", {"yes", "no"}, false},
        {"age_bucket",
         {"0-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80-89",
          "90-99", "100-109"},
         false},
        {"race", {"black_or_african_american", "white", "asian", "hispanic_or_latino", "other"},
         false},
        {"vhl", {"mutated", "not_mutated"}, false},
        {"pbmr1", {"mutated", "not_mutated"}, false},
        {"ttn", {"mutated", "not_mutated"}, false},
    };
    return s;
}

inline const VariableSchema& variable(const std::string& name) {
    for (const auto& v : schema())
        if (v.name == name) return v;
    throw UnknownLevel("unknown variable '" + name + "'");
}

inline bool is_gene(const std::string& name) {
    return name == "vhl" || name == "pbmr1" || name == "ttn";
}

inline float encode_ordinal(const std::string& var_name, const std::string& value) {
    const VariableSchema& v = variable(var_name);
    if (!v.ordinal) throw UnknownLevel("'" + var_name + "' is not ordinal");
    if (value == kUnknown) return -1.0f;
    const auto it = std::find(v.levels.begin(), v.levels.end(), value);
    if (it == v.levels.end())
        throw UnknownLevel("variable '" + var_name + "': undeclared level '" + value + "'");
    const auto rank = size_t(it - v.levels.begin());
    return float(double(rank) / double(v.levels.size() - 1));
}

inline std::vector<float> encode_onehot(const std::string& var_name, const std::string& value) {
    const VariableSchema& v = variable(var_name);
    std::vector<float> out(v.levels.size() + 1, 0.0f);
    if (value == kUnknown) {
        out.back() = 1.0f;
        return out;
    }
    const auto it = std::find(v.levels.begin(), v.levels.end(), value);
    if (it == v.levels.end())
        throw UnknownLevel("variable '" + var_name + "': undeclared level '" + value + "'");
    out[size_t(it - v.levels.begin())] = 1.0f;
    return out;
}

// 6 ordinal slots + one-hot blocks (3+3+12+6+3+3+3) = 39.
inline constexpr size_t kClingenDim = 39;

inline FeatureVector encode_clingen(
    const std::map<std::string, std::string>& clinical_raw,
    const std::optional<std::map<std::string, std::string>>& genomics_raw) {
    auto lookup = [&](const std::string& name) -> std::string {
        const auto& src = is_gene(name)
                              ? (genomics_raw ? *genomics_raw : std::map<std::string, std::string>{})
                              : clinical_raw;
        const auto it = src.find(name);
        return it == src.end() ? std::string(kUnknown) : it->second;
    };

    FeatureVector out;
    out.reserve(kClingenDim);
    for (const auto& v : schema()) {
        if (v.ordinal) {
            out.push_back(encode_ordinal(v.name, lookup(v.name)));
        } else {
            const auto block = encode_onehot(v.name, lookup(v.name));
            out.insert(out.end(), block.begin(), block.end());
        }
    }
    if (out.size() != kClingenDim)
        throw Error("clingen schema dim drifted from its declared constant");
    return out;
}

} // namespace mmist::tabular
