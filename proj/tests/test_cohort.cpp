#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmist/cohort_io.hpp"
#include "mmist/rng.hpp"

namespace fs = std::filesystem;
using namespace mmist;

namespace {

// Builds a tiny two-patient cohort on disk and returns its manifest path.
struct MiniCohort {
    fs::path dir;
    fs::path manifest;

    explicit MiniCohort(const std::string& name) {
        dir = fs::temp_directory_path() / ("cohort_tests_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir / "features");
        manifest = dir / "manifest.csv";
    }

    void feature(const std::string& file, size_t dim, float fill = 0.5f) const {
        write_feature_file(dir / "features" / file, FeatureVector(dim, fill));
    }

    void write_manifest(const std::vector<std::string>& rows,
                        const std::string& header = kManifestHeader) const {
        std::ofstream out(manifest, std::ios::binary);
        out << header << "\n";
        for (const auto& r : rows) out << r << "\n";
    }

    void write_tabular(const std::vector<std::string>& rows) const {
        std::ofstream out(dir / "tabular.csv", std::ios::binary);
        out << kTabularHeader << "\n";
        for (const auto& r : rows) out << r << "\n";
    }
};

} // namespace

TEST_CASE("load_cohort assembles patients in first-appearance order") {
    MiniCohort mc("order");
    mc.feature("b_w1.mmfv", 2048);
    mc.feature("b_c1.mmfv", 512, 0.25f);
    mc.feature("b_c2.mmfv", 512, 0.75f);
    mc.feature("a_w1.mmfv", 2048);
    mc.write_manifest({
        "pb,train,1,wsi,w1,features/b_w1.mmfv",
        "pb,train,1,ct,c1,features/b_c1.mmfv",
        "pb,train,1,ct,c2,features/b_c2.mmfv",
        "pa,test,0,wsi,w1,features/a_w1.mmfv",
    });
    const Cohort c = load_cohort(mc.manifest, mc.dir);
    REQUIRE(c.patients.size() == 2);
    CHECK(c.patients[0].patient_id == "pb");
    CHECK(c.patients[1].patient_id == "pa");
    CHECK(c.patients[0].split == Split::TRAIN);
    CHECK(c.patients[1].split == Split::TEST);
    CHECK(c.patients[0].label_12mo == 1);
    CHECK(c.patients[1].label_12mo == 0);

    const auto& bag = c.patients[0].bag(Modality::CT);
    REQUIRE(bag.has_value());
    REQUIRE(bag->instances.size() == 2);  // bag keeps manifest row order
    CHECK(bag->instance_ids[0] == "c1");
    CHECK(bag->instances[0][0] == doctest::Approx(0.25));
    CHECK(bag->instances[1][0] == doctest::Approx(0.75));
    CHECK_FALSE(c.patients[1].bag(Modality::MRI).has_value());
}

TEST_CASE("load_cohort raises the declared errors") {
    SUBCASE("duplicate instance id") {
        MiniCohort mc("dup");
        mc.feature("w1.mmfv", 2048);
        mc.write_manifest({
            "p1,train,1,wsi,w1,features/w1.mmfv",
            "p1,train,1,wsi,w1,features/w1.mmfv",
        });
        CHECK_THROWS_AS(load_cohort(mc.manifest, mc.dir), DuplicateInstanceId);
    }
    SUBCASE("same id in different modalities is allowed") {
        MiniCohort mc("dup_ok");
        mc.feature("w1.mmfv", 2048);
        mc.feature("c1.mmfv", 512);
        mc.write_manifest({
            "p1,train,1,wsi,s1,features/w1.mmfv",
            "p1,train,1,ct,s1,features/c1.mmfv",
        });
        CHECK_NOTHROW(load_cohort(mc.manifest, mc.dir));
    }
    SUBCASE("dimension mismatch") {
        MiniCohort mc("dim");
        mc.feature("w1.mmfv", 100);
        mc.write_manifest({"p1,train,1,wsi,w1,features/w1.mmfv"});
        CHECK_THROWS_AS(load_cohort(mc.manifest, mc.dir), DimensionMismatch);
    }
    SUBCASE("missing feature file") {
        MiniCohort mc("missing");
        mc.write_manifest({"p1,train,1,wsi,w1,features/nope.mmfv"});
        CHECK_THROWS_AS(load_cohort(mc.manifest, mc.dir), MissingFeatureFile);
    }
    SUBCASE("unknown modality") {
        MiniCohort mc("mod");
        mc.feature("w1.mmfv", 2048);
        mc.write_manifest({"p1,train,1,xray,w1,features/w1.mmfv"});
        CHECK_THROWS_AS(load_cohort(mc.manifest, mc.dir), UnknownModality);
    }
    SUBCASE("bad manifest header") {
        MiniCohort mc("header");
        mc.write_manifest({}, "patient,split,label,modality,instance,path");
        CHECK_THROWS(load_cohort(mc.manifest, mc.dir));
    }
}

TEST_CASE("tabular fields attach to patients and encode on demand") {
    MiniCohort mc("tabular");
    mc.feature("w1.mmfv", 2048);
    mc.write_manifest({"p1,train,1,wsi,w1,features/w1.mmfv"});
    mc.write_tabular({
        "p1,t,t2",
        "p1,gender,female",
        "p1,vhl,mutated",
    });
    Cohort c = load_cohort(mc.manifest, mc.dir);
    CHECK(c.patients[0].clinical_raw.at("t") == "t2");
    REQUIRE(c.patients[0].genomics_raw.has_value());
    CHECK(c.patients[0].genomics_raw->at("vhl") == "mutated");

    encode_cohort_clingen(c);
    const auto& bag = c.patients[0].bag(Modality::CLINGEN);
    REQUIRE(bag.has_value());
    CHECK(bag->instances[0].size() == tabular::kClingenDim);
    CHECK(bag->instances[0][0] == doctest::Approx(0.4));  // t2 rank 4 of 10

    // Pre-encoded clingen bags are left untouched.
    const FeatureVector before = bag->instances[0];
    encode_cohort_clingen(c);
    CHECK(c.patients[0].bag(Modality::CLINGEN)->instances[0] == before);
}

TEST_CASE("pre-encoded clingen manifest rows are accepted") {
    MiniCohort mc("preenc");
    mc.feature("w1.mmfv", 2048);
    mc.feature("g1.mmfv", tabular::kClingenDim, 0.125f);
    mc.write_manifest({
        "p1,train,1,wsi,w1,features/w1.mmfv",
        "p1,train,1,clingen,g1,features/g1.mmfv",
    });
    const Cohort c = load_cohort(mc.manifest, mc.dir);
    const auto& bag = c.patients[0].bag(Modality::CLINGEN);
    REQUIRE(bag.has_value());
    CHECK(bag->instances[0][3] == doctest::Approx(0.125));
}

TEST_CASE("loading the same manifest twice yields identical cohorts") {
    MiniCohort mc("repeat");
    Rng rng(7);
    mc.write_manifest({
        "p1,train,1,wsi,w1,features/w1.mmfv",
        "p2,test,0,wsi,w2,features/w2.mmfv",
        "p2,test,0,mri,m1,features/m1.mmfv",
    });
    mc.feature("w1.mmfv", 2048, float(rng.uniform()));
    mc.feature("w2.mmfv", 2048, float(rng.uniform()));
    mc.feature("m1.mmfv", 512, float(rng.uniform()));
    const Cohort a = load_cohort(mc.manifest, mc.dir);
    const Cohort b = load_cohort(mc.manifest, mc.dir);
    REQUIRE(a.patients.size() == b.patients.size());
    for (size_t i = 0; i < a.patients.size(); ++i) {
        CHECK(a.patients[i].patient_id == b.patients[i].patient_id);
        for (Modality m : kAllModalities) {
            const auto& ba = a.patients[i].bag(m);
            const auto& bb = b.patients[i].bag(m);
            CHECK(ba.has_value() == bb.has_value());
            if (ba) CHECK(ba->instances == bb->instances);
        }
    }
}

TEST_CASE("modality mask counts clingen as always present after encoding") {
    MiniCohort mc("mask");
    mc.feature("w1.mmfv", 2048);
    mc.write_manifest({"p1,train,1,wsi,w1,features/w1.mmfv"});
    Cohort c = load_cohort(mc.manifest, mc.dir);
    encode_cohort_clingen(c);
    const ModalityMask mask = modality_mask(c.patients[0]);
    CHECK(mask[Modality::WSI]);
    CHECK(mask[Modality::CLINGEN]);
    CHECK_FALSE(mask[Modality::CT]);
    CHECK(mask.count() == 2);
}
