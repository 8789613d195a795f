#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sspain/data.hpp"
#include "sspain/error.hpp"

using namespace sspain;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("sspain_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

bool frames_identical(const Frame& a, const Frame& b) {
    if (a.subject_id != b.subject_id || a.frame_id != b.frame_id) return false;
    if (a.pspi != b.pspi || a.level != b.level) return false;
    if (a.au_values != b.au_values || a.landmarks != b.landmarks) return false;
    if (!a.image.same_shape(b.image)) return false;
    for (std::size_t i = 0; i < a.image.size(); ++i)
        if (a.image[i] != b.image[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("pain rescaling follows the level table") {
    CHECK(rescale_pain(0.0) == 0);
    CHECK(rescale_pain(15.0) == 5);
    CHECK(rescale_pain(4.0) == 4);
    CHECK(rescale_pain(5.0) == 4);
    CHECK(rescale_pain(5.99) == 4);
    CHECK(rescale_pain(6.0) == 5);
    CHECK(rescale_pain(0.5) == 0);

    int prev = 0;
    for (int pspi = 0; pspi <= 15; ++pspi) {
        const int level = rescale_pain(pspi);
        CHECK(level >= prev);
        prev = level;
    }

    CHECK_THROWS_AS(rescale_pain(-0.1), RangeError);
    CHECK_THROWS_AS(rescale_pain(15.1), RangeError);
    CHECK_THROWS_AS(rescale_pain(3.0, RescaleTable{0, 1, 2}), ConfigError);
    CHECK_THROWS_AS(rescale_pain(3.0, RescaleTable{1, 2, 3, 4, 5, 6}), ConfigError);

    RescaleTable coarse = {0, 2, 4, 6, 8, 10};
    CHECK(rescale_pain(3.0, coarse) == 1);
    CHECK(rescale_pain(10.0, coarse) == 5);
}

TEST_CASE("synthetic generation is deterministic and correctly sized") {
    SynthConfig cfg;
    cfg.n_subjects = 3;
    cfg.frames_per_subject = 40;
    Dataset a = generate_synthetic(cfg);
    Dataset b = generate_synthetic(cfg);
    REQUIRE(a.frames.size() == 120u);
    REQUIRE(a.subjects.size() == 3u);
    CHECK(a.au_ids == synthetic_au_ids());
    REQUIRE(b.frames.size() == a.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i)
        CHECK(frames_identical(a.frames[i], b.frames[i]));

    SynthConfig other = cfg;
    other.seed = 8;
    Dataset c = generate_synthetic(other);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.frames.size() && !any_diff; ++i)
        any_diff = !frames_identical(a.frames[i], c.frames[i]);
    CHECK(any_diff);
}

TEST_CASE("synthetic frames satisfy the documented invariants") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.frames_per_subject = 30;
    Dataset ds = generate_synthetic(cfg);
    for (const Frame& f : ds.frames) {
        CHECK(f.level == rescale_pain(f.pspi));
        CHECK(f.au_values.size() == ds.au_ids.size());
        CHECK(f.landmarks.size() == ds.au_ids.size());
        for (double v : f.au_values) {
            CHECK(v >= 0.0);
            CHECK(v <= 5.0);
        }
        for (auto [x, y] : f.landmarks) {
            CHECK(x >= 0);
            CHECK(y >= 0);
            CHECK(x < cfg.image_size);
            CHECK(y < cfg.image_size);
        }
        for (std::size_t i = 0; i < f.image.size(); ++i) {
            CHECK(f.image[i] >= 0.0);
            CHECK(f.image[i] <= 1.0);
            // 8-bit quantization
            CHECK(f.image[i] == doctest::Approx(std::round(f.image[i] * 255.0) / 255.0)
                                    .epsilon(1e-12));
        }
    }
}

TEST_CASE("relevant AU values track the level, irrelevant ones do not") {
    SynthConfig cfg;
    cfg.n_subjects = 6;
    cfg.frames_per_subject = 200;
    Dataset ds = generate_synthetic(cfg);
    REQUIRE(ds.frames.size() >= 1000u);
    std::vector<double> levels;
    for (const Frame& f : ds.frames) levels.push_back(static_cast<double>(f.level));
    for (std::size_t k = 0; k < ds.au_ids.size(); ++k) {
        std::vector<double> vals;
        for (const Frame& f : ds.frames) vals.push_back(f.au_values[k]);
        const double r = pearson(levels, vals);
        const bool relevant = std::find(cfg.relevant_au_ids.begin(), cfg.relevant_au_ids.end(),
                                        ds.au_ids[k]) != cfg.relevant_au_ids.end();
        if (relevant) {
            CHECK(r > 0.9);
        } else {
            CHECK(r > -0.15);
            CHECK(r < 0.15);
        }
    }
}

TEST_CASE("image rendering: no noise and silent AUs give a black frame") {
    Rng rng(5);
    auto marks = synthetic_landmark_grid(32);
    Tensor img = render_synthetic_image(32, marks, std::vector<double>(marks.size(), 0.0), 0.0,
                                        rng);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(img[i] == 0.0);

    std::vector<double> one(marks.size(), 0.0);
    one[3] = 5.0;
    Tensor lit = render_synthetic_image(32, marks, one, 0.0, rng);
    const auto [x, y] = marks[3];
    CHECK(lit.at3(0, y, x) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(lit.at3(0, 0, 31) == 0.0);  // far corner untouched
}

TEST_CASE("synthetic config validation") {
    SynthConfig cfg;
    cfg.relevant_au_ids = {};
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg.relevant_au_ids = synthetic_au_ids();
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = SynthConfig{};
    cfg.image_size = 15;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = SynthConfig{};
    cfg.relevant_au_ids = {1, 99};
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("leave-one-subject-out split partitions the frames") {
    SynthConfig cfg;
    cfg.n_subjects = 3;
    cfg.frames_per_subject = 10;
    Dataset ds = generate_synthetic(cfg);
    for (const std::string& held : ds.subjects) {
        auto [train, test] = split_loso(ds, held);
        CHECK(train.frames.size() + test.frames.size() == ds.frames.size());
        for (const Frame& f : test.frames) CHECK(f.subject_id == held);
        for (const Frame& f : train.frames) CHECK(f.subject_id != held);
        CHECK(std::find(train.subjects.begin(), train.subjects.end(), held) ==
              train.subjects.end());
        CHECK(test.subjects == std::vector<std::string>{held});
        CHECK(train.au_ids == ds.au_ids);
    }
    CHECK_THROWS_WITH_AS(split_loso(ds, "nobody"), "unknown subject: nobody", RangeError);
}

TEST_CASE("PGM round-trip preserves quantized pixels") {
    TempDir tmp("pgm");
    Tensor img({1, 5, 7});
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = static_cast<double>(i) / (img.size() - 1);
    const std::string path = tmp.str() + "/img.pgm";
    save_pgm(path, img);
    Tensor back = load_pgm(path);
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(back[i] == doctest::Approx(std::round(img[i] * 255.0) / 255.0).epsilon(1e-12));

    CHECK_THROWS_AS(load_pgm(tmp.str() + "/missing.pgm"), IoError);
}

TEST_CASE("dataset save/load round-trip") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.frames_per_subject = 8;
    Dataset ds = generate_synthetic(cfg);
    TempDir tmp("roundtrip");
    save_dataset(ds, tmp.str());
    Dataset back = load_dataset(tmp.str());
    REQUIRE(back.frames.size() == ds.frames.size());
    CHECK(back.subjects == ds.subjects);
    CHECK(back.au_ids == ds.au_ids);
    for (std::size_t i = 0; i < ds.frames.size(); ++i)
        CHECK(frames_identical(ds.frames[i], back.frames[i]));
}

TEST_CASE("empty dataset directory loads as an empty dataset") {
    TempDir tmp("empty");
    Dataset ds = load_dataset(tmp.str());
    CHECK(ds.frames.empty());
    CHECK(ds.subjects.empty());
}

TEST_CASE("ingestion errors name the offending frame or file") {
    SynthConfig cfg;
    cfg.n_subjects = 1;
    cfg.frames_per_subject = 4;
    Dataset ds = generate_synthetic(cfg);

    {
        TempDir tmp("missing_image");
        save_dataset(ds, tmp.str());
        fs::remove(tmp.path / "s000" / "frames" / "f0002.pgm");
        CHECK_THROWS_AS(load_dataset(tmp.str()), IoError);
        try {
            load_dataset(tmp.str());
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("f0002") != std::string::npos);
        }
    }
    {
        TempDir tmp("orphan_image");
        save_dataset(ds, tmp.str());
        save_pgm((tmp.path / "s000" / "frames" / "f9999.pgm").string(), ds.frames[0].image);
        try {
            load_dataset(tmp.str());
            FAIL("expected an error for the unlabeled image");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("f9999") != std::string::npos);
        }
    }
    {
        TempDir tmp("bad_landmark");
        save_dataset(ds, tmp.str());
        // rewrite one landmark outside the image
        const fs::path lm = tmp.path / "s000" / "landmarks.csv";
        std::ifstream in(lm);
        std::string header, line, rest;
        std::getline(in, header);
        std::getline(in, line);
        std::string tail((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const auto comma = line.find(',');
        line = line.substr(0, comma) + ",999" + line.substr(line.find(',', comma + 1));
        std::ofstream out(lm, std::ios::binary);
        out << header << "\n" << line << "\n" << tail;
        out.close();
        CHECK_THROWS_AS(load_dataset(tmp.str()), RangeError);
    }
    {
        TempDir tmp("bad_au_columns");
        save_dataset(ds, tmp.str());
        const fs::path aus = tmp.path / "s000" / "aus.csv";
        std::ifstream in(aus);
        std::string content((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const auto pos = content.find("au1");
        content.replace(pos, 3, "au9");
        std::ofstream out(aus, std::ios::binary);
        out << content;
        out.close();
        CHECK_THROWS_AS(load_dataset(tmp.str()), IoError);
    }
}
