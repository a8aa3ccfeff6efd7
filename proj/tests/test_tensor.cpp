// Dense tensor container and the S3DT binary file format.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "seld3d/tensor.hpp"

using namespace seld3d;

namespace {

// Unique temp path per call; removed by the caller.
std::string temp_path(const char* tag) {
    static int counter = 0;
    return std::string("/tmp/seld3d_tensor_test_") + tag + "_" + std::to_string(counter++) +
           ".s3dt";
}

} // namespace

TEST_CASE("tensor indexing is row major") {
    TensorD t({2, 3, 4});
    REQUIRE(t.size() == 24);
    REQUIRE(t.ndim() == 3);
    CHECK(t.dim(2) == 4);

    double v = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) t.at(i, j, k) = v++;
    // at(i, j, k) and flat indexing must agree on the layout.
    CHECK(t[0] == 0.0);
    CHECK(t[4 + 3] == 7.0);          // (0, 1, 3)
    CHECK(t[12] == 12.0);            // (1, 0, 0)
    CHECK(t.at(1, 2, 3) == 23.0);

    TensorD m({3, 5});
    m.at(2, 4) = 9.0;
    CHECK(m[2 * 5 + 4] == 9.0);

    TensorD q({2, 2, 2, 2});
    q.at(1, 0, 1, 0) = 5.0;
    CHECK(q[10] == 5.0);
}

TEST_CASE("fill and cast") {
    Tensor t({2, 2});
    t.fill(1.5f);
    auto d = t.cast<double>();
    REQUIRE(d.same_shape(TensorD({2, 2})));
    CHECK(d[3] == 1.5);

    CHECK_FALSE(t.same_shape(Tensor({2, 3})));
}

TEST_CASE("default-constructed tensor is empty") {
    Tensor t;
    CHECK(t.size() == 0);
    CHECK(t.ndim() == 0);
}

TEST_CASE("tensor file round trip") {
    Tensor t({3, 2});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.25f - 1.0f;
    const std::string path = temp_path("roundtrip");
    save_tensor(t, path);

    Tensor back = load_tensor(path);
    REQUIRE(back.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
    std::remove(path.c_str());
}

TEST_CASE("tensor file rejects corrupt input") {
    CHECK_THROWS_AS(load_tensor("/nonexistent/t.s3dt"), IoError);

    const std::string path = temp_path("corrupt");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_tensor(path), IoError);

    // Valid header but truncated payload.
    Tensor t({4, 4});
    save_tensor(t, path);
    {
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        std::ofstream os(path, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
    }
    CHECK_THROWS_AS(load_tensor(path), IoError);
    std::remove(path.c_str());
}
