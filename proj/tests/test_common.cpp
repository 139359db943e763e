#include "pocketk/common.hpp"
#include "pocketk/waveform_io.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

using namespace pocketk;

TEST_SUITE("common") {
    TEST_CASE("rfc3339 round trip and offsets") {
        const auto t = parse_rfc3339("2021-07-01T00:00:00Z");
        CHECK(format_rfc3339(t) == "2021-07-01T00:00:00Z");
        CHECK(parse_rfc3339("2021-07-01T08:00:00+08:00") == t);
        CHECK(parse_rfc3339("2021-07-01T00:00:00.750Z") == t);
        CHECK_THROWS_AS(parse_rfc3339("2021-13-01T00:00:00Z"), ParseError);
        CHECK_THROWS_AS(parse_rfc3339("yesterday"), ParseError);
        CHECK(minutes_between(parse_rfc3339("2021-07-01T01:30:00Z"), t) == doctest::Approx(90.0));
    }

    TEST_CASE("rng is deterministic and streams differ") {
        Rng a(42), b(42), c(derive_seed(42, 1));
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
        CHECK(Rng(42).next_u64() != c.next_u64());
        CHECK(derive_seed(42, 1) != derive_seed(42, 2));
    }

    TEST_CASE("rng distributions have the right moments") {
        Rng rng(7);
        double s = 0.0, s2 = 0.0, u = 0.0;
        const int n = 200000;
        for (int i = 0; i < n; ++i) {
            const double z = rng.normal();
            s += z;
            s2 += z * z;
            const double x = rng.uniform();
            CHECK(x >= 0.0);
            CHECK(x < 1.0);
            u += x;
        }
        CHECK(s / n == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
        CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
        CHECK(u / n == doctest::Approx(0.5).epsilon(0.01));
        for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7);
    }

    TEST_CASE("csv table parsing") {
        const auto t = CsvTable::parse("# provenance\na,b\n1,2\n\n3,4\n");
        CHECK(t.rows() == 2);
        CHECK(t.at(1, t.column("b")) == "4");
        CHECK_FALSE(t.has_column("c"));
        CHECK_THROWS_AS(t.column("c"), ParseError);
        CHECK_THROWS_AS(CsvTable::parse("a,b\n1\n"), ParseError);
        CHECK(parse_double("2.5", "x") == 2.5);
        CHECK_THROWS_AS(parse_double("2.5x", "x"), ParseError);
        CHECK_THROWS_AS(parse_int("", "n"), ParseError);
    }

    TEST_CASE("format_double round trips") {
        for (const double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5}) {
            CHECK(parse_double(format_double(v), "v") == v);
        }
    }

    TEST_CASE("statistics helpers") {
        const std::vector<double> xs{40.0, 60.0};
        CHECK(mean(xs) == 50.0);
        CHECK(sample_sd(xs) == doctest::Approx(14.142135623730951));
        CHECK(sample_sd(std::vector<double>{3.0}) == 0.0);
        CHECK(median({3.0, 1.0, 2.0}) == 2.0);
        CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
        CHECK(fnv1a_hex("") == "cbf29ce484222325");
        CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    }

    TEST_CASE("wire format round trip is bit exact") {
        Waveform wf;
        wf.fs_hz = 500;
        Rng rng(3);
        for (int i = 0; i < 15000; ++i) wf.samples.push_back(static_cast<float>(rng.normal(0.0, 1.0)));
        wf.samples.push_back(-0.0f);
        wf.samples.push_back(std::numeric_limits<float>::denorm_min());
        const auto bytes = encode_waveform(wf);
        CHECK(bytes.size() == kWaveformHeaderSize + 4 * wf.samples.size());
        CHECK(bytes[0] == 'P');
        CHECK(bytes[8] == 1);
        CHECK(bytes[9] == 0);
        const auto back = decode_waveform(bytes);
        CHECK(back.fs_hz == 500);
        REQUIRE(back.samples.size() == wf.samples.size());
        CHECK(std::memcmp(back.samples.data(), wf.samples.data(), 4 * wf.samples.size()) == 0);
        CHECK(encode_waveform(back) == bytes);
    }

    TEST_CASE("wire format little-endian layout") {
        Waveform wf{1000, {1.0f}};
        const auto b = encode_waveform(wf);
        CHECK(b[10] == 0xE8);
        CHECK(b[11] == 0x03);
        CHECK(b[14] == 1);
        // 1.0f = 0x3F800000
        CHECK(b[32] == 0x00);
        CHECK(b[34] == 0x80);
        CHECK(b[35] == 0x3F);
    }

    TEST_CASE("wire format errors name the field") {
        Waveform wf{500, std::vector<float>(100, 0.5f)};
        auto bytes = encode_waveform(wf);
        auto expect_field = [](std::vector<std::uint8_t> b, const std::string& field) {
            try {
                decode_waveform(b);
                FAIL("expected ParseError");
            } catch (const ParseError& e) {
                CHECK(e.field() == field);
            }
        };
        auto truncated = bytes;
        truncated.resize(truncated.size() - 3);
        expect_field(truncated, "sample_count");
        auto bad_magic = bytes;
        bad_magic[0] = 'X';
        expect_field(bad_magic, "magic");
        auto bad_version = bytes;
        bad_version[8] = 2;
        expect_field(bad_version, "version");
        expect_field(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10), "header");
        auto zero_fs = bytes;
        std::fill(zero_fs.begin() + 10, zero_fs.begin() + 14, 0);
        CHECK_THROWS_AS(decode_waveform(zero_fs), ParameterError);
    }

    TEST_CASE("waveform file io") {
        const auto dir = std::filesystem::temp_directory_path() / "pocketk_test_common";
        std::filesystem::remove_all(dir);
        Waveform wf{250, {1.0f, -2.0f, 3.5f}};
        write_waveform_file(dir / "a.pkecg", wf);
        CHECK(read_waveform_file(dir / "a.pkecg") == wf);
        CHECK_THROWS_AS(read_waveform_file(dir / "missing.pkecg"), IoError);
        std::filesystem::remove_all(dir);
    }
}
