#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "ulb/data.hpp"

using namespace ulb;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "ulb_data_tests";
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void push_be_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

}  // namespace

TEST_CASE("synth_gaussians") {
  SECTION("spread zero collapses onto the centers") {
    const SynthSpec spec{3, 4, 5, 0.0, 42};
    const Dataset ds = synth_gaussians(spec);
    REQUIRE(ds.n == 12);
    for (int c = 0; c < 3; ++c) {
      const double* first = ds.row(c * 4);
      double norm = 0.0;
      for (int j = 0; j < 5; ++j) norm += first[j] * first[j];
      CHECK(norm == Catch::Approx(1.0).epsilon(1e-12));  // unit-norm centers
      for (int k = 1; k < 4; ++k) {
        for (int j = 0; j < 5; ++j) CHECK(ds.row(c * 4 + k)[j] == first[j]);
      }
    }
  }

  SECTION("deterministic and correctly counted") {
    const SynthSpec spec{8, 500, 6, 0.3, 7};
    const Dataset a = synth_gaussians(spec);
    const Dataset b = synth_gaussians(spec);
    REQUIRE(a.n == 4000);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    std::map<int, int> counts;
    for (int y : a.labels) counts[y]++;
    for (int c = 0; c < 8; ++c) CHECK(counts[c] == 500);
    for (int i = 0; i < a.n; ++i) CHECK(a.ids[i] == i);
    validate(a);
  }
}

TEST_CASE("load_idx") {
  const fs::path dir = temp_dir();
  const fs::path img_path = dir / "images.idx";
  const fs::path lab_path = dir / "labels.idx";

  // two 2x3 images
  std::vector<unsigned char> img;
  push_be_u32(img, 2051);
  push_be_u32(img, 2);
  push_be_u32(img, 2);
  push_be_u32(img, 3);
  for (int v = 0; v < 12; ++v) img.push_back(static_cast<unsigned char>(v * 20));
  img[16 + 3] = 255;
  std::vector<unsigned char> lab;
  push_be_u32(lab, 2049);
  push_be_u32(lab, 2);
  lab.push_back(1);
  lab.push_back(0);
  write_bytes(img_path, img);
  write_bytes(lab_path, lab);

  SECTION("round-trips the written records") {
    const Dataset ds = load_idx(img_path.string(), lab_path.string());
    REQUIRE(ds.n == 2);
    REQUIRE(ds.d == 6);
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.ids == std::vector<std::int64_t>{0, 1});
    CHECK(ds.row(0)[0] == 0.0);
    CHECK(ds.row(0)[3] == 1.0);            // byte 255 -> exactly 1.0
    CHECK(ds.row(0)[1] == 20.0 / 255.0);   // row-major flattening
    CHECK(ds.row(1)[0] == 120.0 / 255.0);
  }

  SECTION("bad magic numbers are format errors") {
    std::vector<unsigned char> bad = img;
    bad[3] = 0x04;
    write_bytes(dir / "bad.idx", bad);
    CHECK_THROWS_WITH(load_idx((dir / "bad.idx").string(), lab_path.string()),
                      Catch::Matchers::ContainsSubstring("magic"));
    std::vector<unsigned char> badlab = lab;
    badlab[3] = 0x00;
    write_bytes(dir / "badlab.idx", badlab);
    CHECK_THROWS_WITH(load_idx(img_path.string(), (dir / "badlab.idx").string()),
                      Catch::Matchers::ContainsSubstring("magic"));
  }

  SECTION("image/label count mismatch is rejected") {
    std::vector<unsigned char> lab3;
    push_be_u32(lab3, 2049);
    push_be_u32(lab3, 3);
    lab3.insert(lab3.end(), {0, 1, 0});
    write_bytes(dir / "lab3.idx", lab3);
    CHECK_THROWS_WITH(load_idx(img_path.string(), (dir / "lab3.idx").string()),
                      Catch::Matchers::ContainsSubstring("mismatch"));
  }
}

TEST_CASE("load_csv") {
  const fs::path dir = temp_dir();
  const fs::path csv = dir / "data.csv";

  SECTION("parses features then the integer label") {
    std::ofstream(csv) << "1.0,2.0,1\n-0.5,0.25,0\n";
    const Dataset ds = load_csv(csv.string());
    REQUIRE(ds.n == 2);
    REQUIRE(ds.d == 2);
    CHECK(ds.row(0)[0] == 1.0);
    CHECK(ds.row(0)[1] == 2.0);
    CHECK(ds.labels == std::vector<int>{1, 0});
  }

  SECTION("rejects non-numeric cells and bad labels") {
    std::ofstream(csv) << "1.0,abc,1\n";
    CHECK_THROWS_WITH(load_csv(csv.string()), Catch::Matchers::ContainsSubstring("non-numeric"));
    std::ofstream(csv) << "1.0,2.0,-3\n";
    CHECK_THROWS_WITH(load_csv(csv.string()), Catch::Matchers::ContainsSubstring("label"));
  }
}

TEST_CASE("split_train_test") {
  Dataset ds;
  ds.n = 10;
  ds.d = 1;
  for (int i = 0; i < 10; ++i) {
    ds.features.push_back(i);
    ds.labels.push_back(i % 2);
    ds.ids.push_back(100 + i);
  }

  SECTION("partitions ids at the requested fraction") {
    const auto [train, test] = split_train_test(ds, 0.2, 5);
    REQUIRE(train.n == 8);
    REQUIRE(test.n == 2);
    std::vector<std::int64_t> all = train.ids;
    all.insert(all.end(), test.ids.begin(), test.ids.end());
    std::sort(all.begin(), all.end());
    CHECK(all == ds.ids);
  }

  SECTION("same seed gives the identical split") {
    const auto [a_train, a_test] = split_train_test(ds, 0.3, 9);
    const auto [b_train, b_test] = split_train_test(ds, 0.3, 9);
    CHECK(a_train.ids == b_train.ids);
    CHECK(a_test.ids == b_test.ids);
  }

  SECTION("fraction bounds are enforced") {
    CHECK_THROWS_AS(split_train_test(ds, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_train_test(ds, 1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("subset helpers") {
  Dataset ds;
  ds.n = 5;
  ds.d = 2;
  ds.features = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  ds.labels = {0, 1, 0, 1, 0};
  ds.ids = {10, 11, 12, 13, 14};

  const Dataset sub = subset_by_ids(ds, {13, 11});
  REQUIRE(sub.n == 2);
  CHECK(sub.ids == std::vector<std::int64_t>{11, 13});  // dataset order preserved
  CHECK(sub.row(0)[0] == 2.0);
  CHECK(sub.row(1)[1] == 7.0);
  CHECK_THROWS_AS(subset_by_ids(ds, {99}), std::invalid_argument);
}
