#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmist/errors.hpp"

namespace mmist {

// The four fusion modalities, in the fixed concatenation order.
enum class Modality : int { CT = 0, MRI = 1, WSI = 2, CLINGEN = 3 };

inline constexpr int kNumModalities = 4;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {
    Modality::CT, Modality::MRI, Modality::WSI, Modality::CLINGEN};

// Imaging modalities carry instance bags; CLINGEN is encoded from tabular data.
inline constexpr std::array<Modality, 3> kImagingModalities = {
    Modality::CT, Modality::MRI, Modality::WSI};

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::CT: return "ct";
        case Modality::MRI: return "mri";
        case Modality::WSI: return "wsi";
        case Modality::CLINGEN: return "clingen";
    }
    return "?";
}

// Table-style display name.
inline const char* modality_label(Modality m) {
    switch (m) {
        case Modality::CT: return "CT";
        case Modality::MRI: return "MRI";
        case Modality::WSI: return "WSI";
        case Modality::CLINGEN: return "ClinGen";
    }
    return "?";
}

inline Modality modality_from_name(const std::string& name) {
    for (Modality m : kAllModalities)
        if (name == modality_name(m)) return m;
    throw UnknownModality("unknown modality '" + name + "'");
}

using FeatureVector = std::vector<float>;

struct FeatureBag {
    Modality modality = Modality::CT;
    std::vector<FeatureVector> instances;   // non-empty, all same dim
    std::vector<std::string> instance_ids;  // parallel to instances, unique
};

enum class Split { TRAIN, TEST };

inline const char* split_name(Split s) { return s == Split::TRAIN ? "train" : "test"; }

struct PatientRecord {
    std::string patient_id;
    Split split = Split::TRAIN;
    int label_12mo = 1;  // 1 = survived, 0 = deceased
    std::array<std::optional<FeatureBag>, kNumModalities> bags;
    std::map<std::string, std::string> clinical_raw;
    std::optional<std::map<std::string, std::string>> genomics_raw;

    const std::optional<FeatureBag>& bag(Modality m) const { return bags[int(m)]; }
    std::optional<FeatureBag>& bag(Modality m) { return bags[int(m)]; }
};

// Eq-1 style availability indicator over the four fusion modalities.
struct ModalityMask {
    std::array<bool, kNumModalities> present{};

    bool operator[](Modality m) const { return present[int(m)]; }
    bool& at(Modality m) { return present[int(m)]; }
    bool operator==(const ModalityMask&) const = default;

    int count() const {
        int n = 0;
        for (bool b : present) n += b;
        return n;
    }
    static ModalityMask all_present() {
        ModalityMask mk;
        mk.present.fill(true);
        return mk;
    }
};

struct Cohort {
    std::vector<PatientRecord> patients;
    std::array<size_t, kNumModalities> modality_dims{};

    size_t dim(Modality m) const { return modality_dims[int(m)]; }
};

// present[m] = true iff the patient has a non-empty bag for modality m;
// CLINGEN counts as present whenever clinical data exists, which is always.
inline ModalityMask modality_mask(const PatientRecord& p) {
    ModalityMask mk;
    for (Modality m : kAllModalities)
        mk.at(m) = p.bag(m).has_value() && !p.bag(m)->instances.empty();
    mk.at(Modality::CLINGEN) = true;
    return mk;
}

struct CohortSummary {
    // patients and per-modality presence counts, per split and total
    struct Row {
        size_t patients = 0;
        std::array<size_t, kNumModalities> with_modality{};
        size_t with_genomics = 0;
        size_t survived = 0;
    };
    Row train, test, total;
};

inline CohortSummary cohort_summary(const Cohort& c) {
    CohortSummary s;
    for (const auto& p : c.patients) {
        auto& row = (p.split == Split::TRAIN) ? s.train : s.test;
        const ModalityMask mk = modality_mask(p);
        for (auto* r : {&row, &s.total}) {
            r->patients++;
            for (Modality m : kAllModalities)
                if (mk[m]) r->with_modality[int(m)]++;
            if (p.genomics_raw.has_value()) r->with_genomics++;
            if (p.label_12mo == 1) r->survived++;
        }
    }
    return s;
}

} // namespace mmist
