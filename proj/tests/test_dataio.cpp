#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "rsb/dataio.hpp"
#include "rsb/errors.hpp"
#include "rsb/rng.hpp"
#include "rsb/synthetic.hpp"

using namespace rsb;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }

    void write(const std::string& text) const {
        std::ofstream f(path, std::ios::binary);
        f << text;
    }
};

Realization tiny_realization() {
    Realization r;
    r.x = Matrix::from_rows({{1.5, -2.25}, {0.1, 0.2}, {3.0, 4.0}, {-0.5, 0.75}});
    r.t = {1, 0, 0, 1};
    r.y_f = {10.125, 2.5, 3.75, 11.0};
    r.y_cf = {0.5, 12.5, 13.75, 1.0};
    r.mu0 = {0.4, 2.4, 3.6, 0.9};
    r.mu1 = {10.4, 12.4, 13.6, 10.9};
    return r;
}

} // namespace

TEST_SUITE("dataio") {

TEST_CASE("write and read round-trip bitwise") {
    TempFile tmp("dataio_roundtrip.csv");
    const Realization r = tiny_realization();
    write_realization_file(r, tmp.path);
    const Realization back = read_realization_file(tmp.path);

    REQUIRE(back.size() == r.size());
    REQUIRE(back.x.same_shape(r.x));
    for (std::size_t i = 0; i < r.x.size(); ++i) {
        CHECK(back.x.storage()[i] == r.x.storage()[i]);
    }
    CHECK(back.t == r.t);
    CHECK(back.y_f == r.y_f);
    CHECK(back.y_cf == r.y_cf);
    CHECK(back.mu0 == r.mu0);
    CHECK(back.mu1 == r.mu1);
}

TEST_CASE("generated realizations survive the trip exactly") {
    SyntheticConfig cfg;
    cfg.n_samples = 40;
    cfg.n_realizations = 1;
    cfg.seed = 71;
    const Realization r = generate(cfg).front();
    TempFile tmp("dataio_synth_roundtrip.csv");
    write_realization_file(r, tmp.path);
    const Realization back = read_realization_file(tmp.path);
    for (std::size_t i = 0; i < r.x.size(); ++i) {
        CHECK(back.x.storage()[i] == r.x.storage()[i]);
    }
    CHECK(back.y_f == r.y_f);
    CHECK(back.y_cf == r.y_cf);
    CHECK(back.mu0 == r.mu0);
    CHECK(back.mu1 == r.mu1);
}

TEST_CASE("optional columns can be absent") {
    TempFile tmp("dataio_factual_only.csv");
    Realization r = tiny_realization();
    r.y_cf.clear();
    r.mu0.clear();
    r.mu1.clear();
    write_realization_file(r, tmp.path);

    std::ifstream f(tmp.path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "x_1,x_2,t,y_f");

    const Realization back = read_realization_file(tmp.path);
    CHECK(back.y_cf.empty());
    CHECK(back.mu0.empty());
    CHECK(back.y_f == r.y_f);
}

TEST_CASE("writer validates internal consistency") {
    TempFile tmp("dataio_writer_invalid.csv");
    Realization r = tiny_realization();
    r.y_f.pop_back();
    CHECK_THROWS_AS(write_realization_file(r, tmp.path), ContractError);

    r = tiny_realization();
    r.mu1.clear();  // mu0 without mu1
    CHECK_THROWS_AS(write_realization_file(r, tmp.path), ContractError);

    r = tiny_realization();
    r.y_cf.resize(2);
    CHECK_THROWS_AS(write_realization_file(r, tmp.path), ContractError);
}

TEST_CASE("reader errors name the file, line and byte") {
    TempFile tmp("dataio_bad_input.csv");

    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_realization_file("no_such_dataio_file.csv"), ParseError);
    }

    SUBCASE("empty file") {
        tmp.write("");
        CHECK_THROWS_AS(read_realization_file(tmp.path), ParseError);
    }

    SUBCASE("header only") {
        tmp.write("x_1,t,y_f\n");
        CHECK_THROWS_WITH_AS(read_realization_file(tmp.path),
                             doctest::Contains("no data rows"), ParseError);
    }

    SUBCASE("bad header start") {
        tmp.write("a,b,c\n1,0,2\n");
        CHECK_THROWS_WITH_AS(read_realization_file(tmp.path),
                             doctest::Contains("header"), ParseError);
    }

    SUBCASE("mu0 without mu1 in header") {
        tmp.write("x_1,t,y_f,mu0\n1,0,2,3\n");
        CHECK_THROWS_AS(read_realization_file(tmp.path), ParseError);
    }

    SUBCASE("truncated row") {
        tmp.write("x_1,x_2,t,y_f\n1.0,2.0,0,3.0\n1.0,2.0,1\n");
        try {
            read_realization_file(tmp.path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            CHECK(msg.find(tmp.path + ":3") != std::string::npos);
            CHECK(msg.find("byte 28") != std::string::npos);
            CHECK(msg.find("expected 4 fields, got 3") != std::string::npos);
        }
    }

    SUBCASE("non-numeric field") {
        tmp.write("x_1,t,y_f\nfoo,0,1\n1.0,1,2\n");
        CHECK_THROWS_WITH_AS(read_realization_file(tmp.path),
                             doctest::Contains("bad number 'foo'"), ParseError);
    }

    SUBCASE("treatment outside {0,1}") {
        tmp.write("x_1,t,y_f\n1.0,2,1.5\n2.0,0,2.5\n");
        CHECK_THROWS_WITH_AS(read_realization_file(tmp.path),
                             doctest::Contains("treatment must be 0 or 1"), ParseError);
    }

    SUBCASE("non-finite value") {
        tmp.write("x_1,t,y_f\ninf,0,1.5\n2.0,1,2.5\n");
        CHECK_THROWS_AS(read_realization_file(tmp.path), ParseError);
    }

    SUBCASE("single arm") {
        tmp.write("x_1,t,y_f\n1.0,1,1.5\n2.0,1,2.5\n");
        CHECK_THROWS_WITH_AS(read_realization_file(tmp.path),
                             doctest::Contains("one treatment arm"), ParseError);
    }
}

TEST_CASE("reader tolerates CRLF and blank lines") {
    TempFile tmp("dataio_crlf.csv");
    tmp.write("x_1,t,y_f\r\n1.0,0,1.5\r\n\r\n2.0,1,2.5\r\n");
    const Realization r = read_realization_file(tmp.path);
    CHECK(r.size() == 2);
    CHECK(r.x.at(1, 0) == 2.0);
    CHECK(r.t == std::vector<int>{0, 1});
}

TEST_CASE("bundles require consistent shapes") {
    TempFile a("dataio_bundle_a.csv");
    TempFile b("dataio_bundle_b.csv");
    a.write("x_1,x_2,t,y_f\n1,2,0,3\n4,5,1,6\n");
    b.write("x_1,t,y_f\n1,0,3\n4,1,6\n");

    const DatasetBundle ok = load_bundle({a.path, a.path}, "twins");
    CHECK(ok.realizations.size() == 2);
    CHECK(ok.feature_dim == 2);
    CHECK(ok.name == "twins");

    CHECK_THROWS_WITH_AS(load_bundle({a.path, b.path}, "broken"),
                         doctest::Contains("disagrees"), ParseError);
    CHECK_THROWS_AS(load_bundle({}, "empty"), ContractError);
}

TEST_CASE("split arithmetic matches the documented rounding") {
    const SplitSpec s747 = split(747, 5);
    CHECK(s747.train_idx.size() == 470);
    CHECK(s747.valid_idx.size() == 202);
    CHECK(s747.test_idx.size() == 75);

    const SplitSpec s1000 = split(1000, 5);
    CHECK(s1000.train_idx.size() == 630);
    CHECK(s1000.valid_idx.size() == 270);
    CHECK(s1000.test_idx.size() == 100);

    CHECK_THROWS_AS(split(9, 5), ContractError);
    CHECK_NOTHROW(split(10, 5));
}

TEST_CASE("splits partition the index range and depend only on the seed") {
    const std::size_t n = 200;
    const SplitSpec s = split(n, 77);

    std::set<std::size_t> seen;
    for (const auto* part : {&s.train_idx, &s.valid_idx, &s.test_idx}) {
        CHECK(std::is_sorted(part->begin(), part->end()));
        for (std::size_t idx : *part) {
            CHECK(idx < n);
            CHECK(seen.insert(idx).second);  // disjoint
        }
    }
    CHECK(seen.size() == n);  // exhaustive

    const SplitSpec again = split(n, 77);
    CHECK(again.train_idx == s.train_idx);
    CHECK(again.valid_idx == s.valid_idx);
    CHECK(again.test_idx == s.test_idx);

    const SplitSpec other = split(n, derive_seed(77, 1));
    CHECK(other.train_idx != s.train_idx);
}

TEST_CASE("min-max normalizer maps the training range onto [0,1]") {
    const Matrix train = Matrix::from_rows({{2.0, 5.0}, {4.0, 5.0}, {6.0, 5.0}});
    const Normalizer nz = Normalizer::fit(train);
    CHECK(nz.kind() == Normalizer::Kind::min_max);
    CHECK(nz.feature_dim() == 2);

    const Matrix out = nz.apply(train);
    CHECK(out.at(0, 0) == 0.0);
    CHECK(out.at(1, 0) == 0.5);
    CHECK(out.at(2, 0) == 1.0);
    // constant features collapse to 0
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.at(i, 1) == 0.0);
    }

    // unseen rows are transformed with the fitted parameters, unclipped
    const Matrix probe = Matrix::from_rows({{0.0, 9.0}, {8.0, 1.0}});
    const Matrix mapped = nz.apply(probe);
    CHECK(mapped.at(0, 0) == -0.5);
    CHECK(mapped.at(1, 0) == 1.5);
    CHECK(mapped.at(0, 1) == 0.0);  // degenerate feature stays pinned

    CHECK_THROWS_AS(nz.apply(Matrix(2, 3)), DimensionError);
}

TEST_CASE("z-score normalizer centers and scales per feature") {
    const Matrix train = Matrix::from_rows({{1.0}, {3.0}, {5.0}});
    const Normalizer nz = Normalizer::fit(train, Normalizer::Kind::z_score);
    const Matrix out = nz.apply(train);
    // population std of {1,3,5} is sqrt(8/3)
    const double sd = std::sqrt(8.0 / 3.0);
    CHECK(out.at(0, 0) == doctest::Approx(-2.0 / sd).epsilon(1e-12));
    CHECK(out.at(1, 0) == 0.0);
    CHECK(out.at(2, 0) == doctest::Approx(2.0 / sd).epsilon(1e-12));

    CHECK(normalizer_kind_from_name("min-max") == Normalizer::Kind::min_max);
    CHECK(normalizer_kind_from_name("z-score") == Normalizer::Kind::z_score);
    CHECK_THROWS_AS(normalizer_kind_from_name("robust"), ConfigError);
    CHECK(std::string(normalizer_kind_name(Normalizer::Kind::min_max)) == "min-max");
}

TEST_CASE("outcome scaler uses population moments and inverts exactly") {
    const std::vector<double> y = {2.0, 4.0, 6.0};
    const OutcomeScaler sc = OutcomeScaler::fit(y);
    CHECK(sc.mean == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(sc.std_dev == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-12));

    for (double v : {-1.0, 0.0, 3.7, 100.0}) {
        CHECK(sc.inverse(sc.transform(v)) == doctest::Approx(v).epsilon(1e-12));
    }

    const std::vector<double> constant = {5.0, 5.0};
    const OutcomeScaler flat = OutcomeScaler::fit(constant);
    CHECK(flat.std_dev == 1.0);  // degenerate guard
    CHECK(flat.transform(5.0) == 0.0);
}

TEST_CASE("gather_split restricts every field to the index list") {
    const Realization r = tiny_realization();
    const std::vector<std::size_t> idx = {2, 0};
    const SplitData sd = gather_split(r, idx);
    CHECK(sd.x.rows() == 2);
    CHECK(sd.x.at(0, 0) == 3.0);
    CHECK(sd.x.at(1, 1) == -2.25);
    CHECK(sd.t == std::vector<int>{0, 1});
    CHECK(sd.y_f == std::vector<double>{3.75, 10.125});
    CHECK(sd.y_cf == std::vector<double>{13.75, 0.5});
    CHECK(sd.mu0 == std::vector<double>{3.6, 0.4});
    CHECK(sd.mu1 == std::vector<double>{13.6, 10.4});

    Realization factual = r;
    factual.y_cf.clear();
    factual.mu0.clear();
    factual.mu1.clear();
    const SplitData sparse = gather_split(factual, idx);
    CHECK(sparse.y_cf.empty());
    CHECK(sparse.mu0.empty());

    const std::vector<std::size_t> bad = {9};
    CHECK_THROWS_AS(gather_split(r, bad), ContractError);
}

} // TEST_SUITE
