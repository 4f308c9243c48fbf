#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oat/dataset.hpp"
#include "oat/png_io.hpp"

using namespace oat;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("oat_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("single-episode dataset round trip") {
    std::string dir = tmp_dir("single");
    generate_dataset(1, 9, dir);
    Dataset ds = load_dataset(dir);
    CHECK(ds.manifest.episode_count == 1);
    REQUIRE(ds.episodes.size() == 1);
    CHECK(ds.episodes[0].steps.size() >= 1);
    CHECK(!ds.manifest.palette.empty());

    // stored images replay from stored states bit-exactly
    const StoredStep& st = ds.episodes[0].steps[0];
    RenderResult again = render(st.state, ds.manifest.sim());
    CHECK(encode_png(again.image) == st.png);
    CHECK(again.gt_masks.owner == st.gt_masks.owner);
  }

  TEST_CASE("regeneration with the same seed is byte-identical") {
    std::string a = tmp_dir("rep_a");
    std::string b = tmp_dir("rep_b");
    generate_dataset(3, 1234, a);
    generate_dataset(3, 1234, b);
    CHECK(slurp(fs::path(a) / "manifest.txt") == slurp(fs::path(b) / "manifest.txt"));
    for (int i = 0; i < 3; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "ep_%06d.rec", i);
      CHECK(slurp(fs::path(a) / "episodes" / name) == slurp(fs::path(b) / "episodes" / name));
    }
  }

  TEST_CASE("default dataset size matches the full-protocol demonstration count") {
    CHECK(kDefaultEpisodes == 320);
  }

  TEST_CASE("record round trip preserves every field") {
    Episode ep = run_expert_episode(77);
    StoredEpisode stored = to_stored(ep);
    std::string dir = tmp_dir("record");
    std::string file = dir + "/one.rec";
    write_episode_record(file, stored);
    StoredEpisode back = read_episode_record(file);
    CHECK(back.instruction == stored.instruction);
    CHECK(back.success == stored.success);
    REQUIRE(back.steps.size() == stored.steps.size());
    for (size_t i = 0; i < back.steps.size(); ++i) {
      CHECK(back.steps[i].png == stored.steps[i].png);
      CHECK(back.steps[i].gt_masks.owner == stored.steps[i].gt_masks.owner);
      CHECK(back.steps[i].gripper_px.u == stored.steps[i].gripper_px.u);
      CHECK(back.steps[i].action.flat() == stored.steps[i].action.flat());
      CHECK(back.steps[i].state.gripper.z == stored.steps[i].state.gripper.z);
    }
  }

  TEST_CASE("IO failures carry path context") {
    CHECK_THROWS_WITH_AS(load_dataset("/nonexistent/nowhere"), doctest::Contains("/nonexistent/nowhere"),
                         DataError);

    std::string dir = tmp_dir("trunc");
    Episode ep = run_expert_episode(5);
    std::string file = dir + "/ep.rec";
    write_episode_record(file, to_stored(ep));
    std::string bytes = slurp(file);
    std::ofstream f(file, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    f.close();
    CHECK_THROWS_AS(read_episode_record(file), DataError);
  }

  TEST_CASE("generate_dataset validates arguments") {
    CHECK_THROWS_AS(generate_dataset(0, 0, tmp_dir("zero")), std::invalid_argument);
  }
}
