#pragma once

#include <cstdint>
#include <vector>

#include "mmist/errors.hpp"
#include "mmist/rng.hpp"

namespace mmist {

// Mean of per-class recalls. A class absent from the labels contributes
// nothing; the mean is taken over the classes that appear.
inline double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw EmptyInput("balanced_accuracy: empty or mismatched inputs");
    double correct[2] = {0, 0};
    double total[2] = {0, 0};
    for (size_t i = 0; i < preds.size(); ++i) {
        total[labels[i]] += 1;
        if (preds[i] == labels[i]) correct[labels[i]] += 1;
    }
    double sum = 0;
    int classes = 0;
    for (int c : {0, 1}) {
        if (total[c] > 0) {
            sum += correct[c] / total[c];
            ++classes;
        }
    }
    return sum / classes;
}

// Seed-deterministic stratified split. Returns a parallel vector with true
// for test membership; per-class test counts are round(fraction * n_class),
// so each class lands within one element of its target proportion.
inline std::vector<bool> stratified_test_assignment(const std::vector<int>& labels,
                                                    double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw InvalidConfig("test_fraction must be in (0,1)");
    std::vector<size_t> by_class[2];
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (int c : {0, 1})
        if (!by_class[c].empty() && by_class[c].size() < 2)
            throw DegenerateClass("class " + std::to_string(c) + " has fewer than 2 members");

    std::vector<bool> is_test(labels.size(), false);
    Rng rng(seed);
    for (int c : {0, 1}) {
        auto& idx = by_class[c];
        rng.shuffle(idx);
        const auto n_test = size_t(double(idx.size()) * test_fraction + 0.5);
        for (size_t i = 0; i < n_test; ++i) is_test[idx[i]] = true;
    }
    return is_test;
}

} // namespace mmist
