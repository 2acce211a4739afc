#include "cirmask/error.hpp"
#include "cirmask/safetensors.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace cirmask;

TEST_CASE("matrices round-trip bitwise with metadata") {
    std::mt19937_64 rng(1);
    const Mat m = testing::random_mat(rng, 3, 5);
    const Vec v = testing::random_mat(rng, 4, 1).col(0);
    SafeTensors st;
    st.put("w", m);
    st.put("b", v);
    st.metadata["epoch"] = "3";
    const auto path = (testing::scratch("safetensors") / "t.safetensors").string();
    st.write(path);

    const SafeTensors back = SafeTensors::read(path);
    CHECK(back.matrix("w") == m);
    CHECK(back.vector("b") == v);
    CHECK(back.metadata.at("epoch") == "3");
    CHECK(back.entry("w").dtype == "F64");
    CHECK(back.entry("w").shape == std::vector<std::int64_t>{3, 5});
    CHECK(back.names() == std::vector<std::string>{"b", "w"});
}

TEST_CASE("reads f32 tensors written by other tools") {
    // header + two float32 values, laid out by hand
    const std::string header = R"({"x":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
    std::string bytes(8, '\0');
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((n >> (8 * i)) & 0xff);
    bytes += header;
    const float vals[2] = {1.5f, -2.25f};
    bytes.append(reinterpret_cast<const char*>(vals), sizeof(vals));
    const auto path = (testing::scratch("safetensors-f32") / "x.safetensors").string();
    std::ofstream(path, std::ios::binary) << bytes;
    const SafeTensors st = SafeTensors::read(path);
    CHECK(st.values("x") == std::vector<double>{1.5, -2.25});
}

TEST_CASE("missing files and tensors are reported") {
    CHECK_THROWS_AS(SafeTensors::read("/nonexistent.safetensors"), Error);
    SafeTensors st;
    CHECK_THROWS_AS(st.matrix("nope"), Error);
}

TEST_CASE("truncated files are rejected") {
    const auto path = (testing::scratch("safetensors-bad") / "bad.safetensors").string();
    std::ofstream(path, std::ios::binary) << "\x40\0\0\0";
    CHECK_THROWS_AS(SafeTensors::read(path), Error);
}
