#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "msrg/checkpoint.hpp"
#include "msrg/errors.hpp"
#include "msrg/rng.hpp"

using namespace msrg;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* tag) {
    static int counter = 0;
    return (fs::temp_directory_path() /
            ("msrg_test_" + std::string(tag) + "_" + std::to_string(++counter) + ".msrg"))
        .string();
}

ParameterMap random_map(Rng& rng, int max_tensors = 6) {
    ParameterMap map;
    map.kind = "encoder";
    map.feature_dim = 1 + rng.uniform_int(32);
    map.layer_count = 1 + rng.uniform_int(5);
    const int n = 1 + static_cast<int>(rng.uniform_int(max_tensors));
    for (int i = 0; i < n; ++i) {
        std::vector<int64_t> shape;
        const int nd = 1 + static_cast<int>(rng.uniform_int(2));
        for (int d = 0; d < nd; ++d) shape.push_back(1 + rng.uniform_int(9));
        Tensor t(shape);
        for (int64_t e = 0; e < t.size(); ++e) t[e] = static_cast<float>(rng.uniform(-9, 9));
        map.add("layer/" + std::to_string(i) + "/w", std::move(t));
    }
    return map;
}

bool identical(const ParameterMap& a, const ParameterMap& b) {
    if (a.size() != b.size() || a.kind != b.kind || a.feature_dim != b.feature_dim ||
        a.layer_count != b.layer_count) {
        return false;
    }
    for (size_t i = 0; i < a.size(); ++i) {
        if (a.name(i) != b.name(i)) return false;
        if (a.tensor(i).shape() != b.tensor(i).shape()) return false;
        if (std::memcmp(a.tensor(i).data(), b.tensor(i).data(),
                        static_cast<size_t>(a.tensor(i).size()) * 4) != 0) {
            return false;
        }
    }
    return true;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact over random maps") {
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
        const ParameterMap map = random_map(rng);
        const std::string path = temp_path("rt");
        save_checkpoint(map, path);
        const ParameterMap back = load_checkpoint(path);
        CHECK(identical(map, back));
        fs::remove(path);
    }
}

TEST_CASE("two saves of the same map are byte-identical") {
    Rng rng(42);
    const ParameterMap map = random_map(rng);
    const std::string p1 = temp_path("dup"), p2 = temp_path("dup");
    save_checkpoint(map, p1);
    save_checkpoint(map, p2);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("empty map saves to a valid file") {
    ParameterMap map;
    map.kind = "empty";
    const std::string path = temp_path("empty");
    save_checkpoint(map, path);
    const ParameterMap back = load_checkpoint(path);
    CHECK(back.size() == 0);
    CHECK(back.kind == "empty");
    fs::remove(path);
}

TEST_CASE("corrupted files raise the specified distinct errors") {
    Rng rng(43);
    const ParameterMap map = random_map(rng);
    const std::string path = temp_path("bad");
    save_checkpoint(map, path);
    const std::vector<char> good = slurp(path);

    SUBCASE("bad magic") {
        std::vector<char> bytes = good;
        bytes[0] = 'X';
        spit(path, bytes);
        try {
            load_checkpoint(path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::bad_magic);
            CHECK(std::string(e.what()).find("MSRG") != std::string::npos);
        }
    }

    SUBCASE("version mismatch") {
        std::vector<char> bytes = good;
        bytes[4] = 99;
        spit(path, bytes);
        try {
            load_checkpoint(path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::version_mismatch);
        }
    }

    SUBCASE("truncated payload") {
        std::vector<char> bytes = good;
        bytes.resize(bytes.size() - 3);
        spit(path, bytes);
        try {
            load_checkpoint(path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::truncated);
        }
    }

    SUBCASE("missing file") {
        try {
            load_checkpoint(path + ".does_not_exist");
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::io);
        }
    }

    fs::remove(path);
}

TEST_CASE("header inconsistencies: shape/nbytes mismatch and overlapping offsets") {
    // Hand-built files: magic, version, header length, JSON header, payload.
    auto build = [](const std::string& header, size_t payload_bytes) {
        std::vector<char> bytes;
        const char magic[4] = {'M', 'S', 'R', 'G'};
        bytes.insert(bytes.end(), magic, magic + 4);
        const uint32_t version = 1;
        bytes.insert(bytes.end(), reinterpret_cast<const char*>(&version),
                     reinterpret_cast<const char*>(&version) + 4);
        const uint64_t hlen = header.size();
        bytes.insert(bytes.end(), reinterpret_cast<const char*>(&hlen),
                     reinterpret_cast<const char*>(&hlen) + 8);
        bytes.insert(bytes.end(), header.begin(), header.end());
        bytes.insert(bytes.end(), payload_bytes, '\0');
        return bytes;
    };
    const std::string path = temp_path("hdr");

    SUBCASE("shape product disagrees with nbytes") {
        spit(path, build(R"({"w":{"dtype":"f32","shape":[2,2],"offset":0,"nbytes":12}})", 16));
        try {
            load_checkpoint(path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::bad_header);
        }
    }

    SUBCASE("overlapping tensors") {
        spit(path, build(R"({"a":{"dtype":"f32","shape":[2],"offset":0,"nbytes":8},)"
                         R"("b":{"dtype":"f32","shape":[2],"offset":4,"nbytes":8}})",
                         16));
        try {
            load_checkpoint(path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::offset_overlap);
        }
    }

    SUBCASE("valid hand-built file loads with matching metadata") {
        spit(path, build(R"({"__metadata__":{"kind":"encoder","feature_dim":2,"layer_count":1},)"
                         R"("w":{"dtype":"f32","shape":[2,2],"offset":0,"nbytes":16}})",
                         16));
        const ParameterMap map = load_checkpoint(path);
        CHECK(map.kind == "encoder");
        CHECK(map.feature_dim == 2);
        CHECK(map.size() == 1);
        CHECK(map.get("w").shape() == std::vector<int64_t>{2, 2});
    }

    fs::remove(path);
}

TEST_CASE("merge compatibility checks") {
    Rng rng(44);
    const ParameterMap m = random_map(rng);

    SUBCASE("identical maps are compatible") { CHECK_NOTHROW(assert_compatible({&m, &m})); }

    SUBCASE("shape mismatch names the offending layer") {
        ParameterMap changed;
        changed.kind = m.kind;
        changed.feature_dim = m.feature_dim;
        changed.layer_count = m.layer_count;
        for (size_t i = 0; i < m.size(); ++i) {
            if (i == 0) {
                changed.add(m.name(i), Tensor({m.tensor(i).size() + 1}));
            } else {
                changed.add(m.name(i), m.tensor(i));
            }
        }
        try {
            assert_compatible({&m, &changed});
            FAIL("expected IncompatibleError");
        } catch (const IncompatibleError& e) {
            CHECK(std::string(e.what()).find(m.name(0)) != std::string::npos);
        }
    }

    SUBCASE("disjoint names list the symmetric difference") {
        ParameterMap a, b;
        a.add("only_in_a", Tensor({1}));
        b.add("only_in_b", Tensor({1}));
        try {
            assert_compatible({&a, &b});
            FAIL("expected IncompatibleError");
        } catch (const IncompatibleError& e) {
            const std::string what = e.what();
            CHECK(what.find("only_in_a") != std::string::npos);
            CHECK(what.find("only_in_b") != std::string::npos);
        }
    }

    SUBCASE("compatibility is reflexive, symmetric and transitive over a compatible set") {
        ParameterMap a = random_map(rng);
        ParameterMap b = a;
        ParameterMap c = a;
        for (size_t i = 0; i < b.size(); ++i) b.tensor(i)[0] += 1.0f;  // values differ, shapes equal
        CHECK(merge_compatible(a, a));
        CHECK(merge_compatible(a, b));
        CHECK(merge_compatible(b, a));
        CHECK(merge_compatible(b, c));
        CHECK(merge_compatible(a, c));
    }

    SUBCASE("fewer than two maps is a usage error") {
        CHECK_THROWS_AS(assert_compatible({&m}), UsageError);
    }
}
