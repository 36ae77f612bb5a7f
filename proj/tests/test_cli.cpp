#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "storm/cli/cli.hpp"
#include "storm/core/image.hpp"
#include "storm/core/mat.hpp"

using storm::cli::run_cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

std::string smoke_config_path() {
    static const std::string path =
        (fs::temp_directory_path() / "storm_cli_smoke.json").string();
    std::ofstream os(path, std::ios::trunc);
    os << "{\"preset\": \"smoke\"}\n";
    return path;
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    REQUIRE(is.good());
    json j;
    is >> j;
    return j;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli: gen-data is idempotent under config and seed") {
    const fs::path a = temp_dir("storm_cli_gen_a");
    const fs::path b = temp_dir("storm_cli_gen_b");
    CHECK(run_cli({"gen-data", "--kind", "pretrain", "--n", "12", "--seed",
                   "9", "--out", a.string()}) == 0);
    CHECK(run_cli({"gen-data", "--kind", "pretrain", "--n", "12", "--seed",
                   "9", "--out", b.string()}) == 0);
    const json ma = read_json(a / "manifest.json");
    const json mb = read_json(b / "manifest.json");
    CHECK(ma["files"] == mb["files"]);
    CHECK(ma["meta"]["content_hash"] == mb["meta"]["content_hash"]);
    CHECK(read_bytes(a / "pretrain.bin") == read_bytes(b / "pretrain.bin"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("cli: gt-as-prediction discovery scores are exactly 1") {
    const fs::path out = temp_dir("storm_cli_gt");
    CHECK(run_cli({"eval-discovery", "--config", smoke_config_path(),
                   "--use-gt-as-pred", "--out", out.string()}) == 0);
    const json rep = read_json(out / "report.json");
    CHECK(rep["mean"]["fg_ari"].get<double>() == 1.0);
    CHECK(rep["mean"]["mbo_i"].get<double>() == 1.0);
    CHECK(rep["mean"]["mbo_c"].get<double>() == 1.0);
    fs::remove_all(out);
}

TEST_CASE("cli: exit codes distinguish config from runtime errors") {
    // unknown flag
    CHECK(run_cli({"gen-data", "--nope", "1", "--out", "/tmp/x"}) == 2);
    // invalid config file content
    const fs::path bad = fs::temp_directory_path() / "storm_bad_cfg.json";
    {
        std::ofstream os(bad, std::ios::trunc);
        os << "{\"joint\": {\"variant\": \"banana\"}}";
    }
    const fs::path out = temp_dir("storm_cli_badcfg");
    CHECK(run_cli({"pretrain", "--config", bad.string(), "--out",
                   out.string()}) == 2);
    // missing checkpoint -> runtime failure
    CHECK(run_cli({"eval-policy", "--config", smoke_config_path(), "--ckpt",
                   "/tmp/does_not_exist.ckpt", "--out", out.string()}) == 3);
    fs::remove(bad);
    fs::remove_all(out);
}

TEST_CASE("cli: pretrain then viz-masks emits one overlay per slot") {
    const fs::path data = temp_dir("storm_cli_p_data");
    const fs::path pre = temp_dir("storm_cli_p_pre");
    const fs::path viz1 = temp_dir("storm_cli_p_viz1");
    const fs::path viz2 = temp_dir("storm_cli_p_viz2");

    CHECK(run_cli({"gen-data", "--kind", "pretrain", "--n", "24", "--seed",
                   "3", "--out", data.string()}) == 0);
    CHECK(run_cli({"pretrain", "--config", smoke_config_path(), "--data",
                   (data / "pretrain.bin").string(), "--out",
                   pre.string()}) == 0);
    CHECK(fs::exists(pre / "checkpoint.bin"));
    CHECK(fs::exists(pre / "resolved_config.json"));
    CHECK(fs::exists(pre / "train_log.jsonl"));

    for (const fs::path& viz : {viz1, viz2})
        CHECK(run_cli({"viz-masks", "--config", smoke_config_path(), "--ckpt",
                       (pre / "checkpoint.bin").string(), "--data",
                       (data / "pretrain.bin").string(), "--n", "2", "--out",
                       viz.string()}) == 0);

    // K=4 slots in the smoke preset: 4 overlays + original + argmax
    std::size_t overlays = 0;
    for (const auto& e : fs::directory_iterator(viz1)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("img0_slot", 0) == 0) ++overlays;
    }
    CHECK(overlays == 4);
    CHECK(fs::exists(viz1 / "img0_original.png"));
    CHECK(fs::exists(viz1 / "img0_argmax.png"));

    // determinism: byte-identical output across reruns
    CHECK(read_bytes(viz1 / "img0_argmax.png") ==
          read_bytes(viz2 / "img0_argmax.png"));
    CHECK(read_json(viz1 / "manifest.json")["files"] ==
          read_json(viz2 / "manifest.json")["files"]);

    // conditioned slots carry their noun in metadata
    const json meta = read_json(viz1 / "manifest.json")["meta"];
    bool any_noun = false;
    for (const auto& img : meta["images"])
        for (const auto& slot : img["slots"])
            if (slot["conditioned"].get<bool>())
                any_noun |= !slot["noun"].get<std::string>().empty();
    CHECK(any_noun);

    fs::remove_all(data);
    fs::remove_all(pre);
    fs::remove_all(viz1);
    fs::remove_all(viz2);
}

TEST_CASE("cli: overlay rendering is shaped and captioned") {
    storm::core::Image img(16, 16);
    std::fill(img.rgb.begin(), img.rgb.end(), 40);
    storm::core::Mat masks(2, 16);
    for (std::size_t j = 0; j < 16; ++j) masks.at(j % 2, j) = 1.0;
    const storm::core::Image ov =
        storm::cli::render_slot_overlay(img, masks, 4, 4, 0, "red");
    CHECK(ov.height == 16);
    CHECK(ov.width == 16);
    const storm::core::Image panel =
        storm::cli::render_argmax_panel(masks, 4, 4, 16, 16);
    CHECK(panel.rgb.size() == img.rgb.size());
}

TEST_CASE("cli: ablate emits all rows and a direct command reproduces one") {
    const fs::path demos = temp_dir("storm_cli_ab_demos");
    const fs::path pre = temp_dir("storm_cli_ab_pre");
    const fs::path abl = temp_dir("storm_cli_ab_out");
    const fs::path direct = temp_dir("storm_cli_ab_direct");
    const fs::path direct_eval = temp_dir("storm_cli_ab_deval");

    CHECK(run_cli({"gen-data", "--kind", "demos", "--task", "push", "--n",
                   "6", "--seed", "11", "--out", demos.string()}) == 0);
    CHECK(run_cli({"pretrain", "--config", smoke_config_path(), "--out",
                   pre.string()}) == 0);
    CHECK(run_cli({"ablate", "--axis", "multi-phase", "--config",
                   smoke_config_path(), "--demos",
                   (demos / "demos.bin").string(), "--pretrain-ckpt",
                   (pre / "checkpoint.bin").string(), "--seeds", "5", "--out",
                   abl.string()}) == 0);

    std::ifstream csv(abl / "results.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "axis,row,seed,id_success,nd_success");
    std::map<std::string, std::pair<double, double>> rows;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string axis, row, seed, id, nd;
        std::getline(ss, axis, ',');
        std::getline(ss, row, ',');
        std::getline(ss, seed, ',');
        std::getline(ss, id, ',');
        std::getline(ss, nd, ',');
        rows[row] = {std::stod(id), std::stod(nd)};
    }
    CHECK(rows.size() == 3);
    CHECK(rows.count("scratch"));
    CHECK(rows.count("frozen"));
    CHECK(rows.count("storm"));
    CHECK(fs::exists(abl / "results.txt"));

    // one row reproduced by the corresponding direct commands
    CHECK(run_cli({"train-policy", "--config", smoke_config_path(), "--seed",
                   "5", "--variant", "frozen", "--demos",
                   (demos / "demos.bin").string(), "--init-from",
                   (pre / "checkpoint.bin").string(), "--out",
                   direct.string()}) == 0);
    CHECK(run_cli({"eval-policy", "--config", smoke_config_path(), "--ckpt",
                   (direct / "checkpoint.bin").string(), "--mode", "ID",
                   "--seed", "1005", "--out", direct_eval.string()}) == 0);
    const json res = read_json(direct_eval / "result.json");
    CHECK(res["success_rate"].get<double>() ==
          doctest::Approx(rows["frozen"].first));

    for (const auto& p : {demos, pre, abl, direct, direct_eval})
        fs::remove_all(p);
}
