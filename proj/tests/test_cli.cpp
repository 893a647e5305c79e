// End-to-end smokes for the command line tool: each subcommand through a
// real process, plus the exit code contract (0 ok, 1 usage, 2 runtime).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fosnet/config.hpp"
#include "fosnet/data.hpp"
#include "fosnet/serialize.hpp"

using namespace fosnet;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "fosnet_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CliResult run_cli(const std::string& args) {
    const fs::path out = work_dir() / "stdout.txt";
    const fs::path err = work_dir() / "stderr.txt";
    const std::string cmd = std::string("\"") + FOSNET_CLI_PATH + "\" " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// A configuration small enough that every subcommand finishes in seconds.
const fs::path& tiny_config() {
    static const fs::path path = [] {
        AppConfig cfg = default_app_config();
        cfg.dataset.train_per_scene = 3;
        cfg.dataset.val_per_scene = 2;
        cfg.train.epochs = 2;
        cfg.train.schedule_step = 2;
        cfg.train.batch_size = 8;
        cfg.train.augment.rescale = false;
        cfg.train.augment.flip = false;
        const fs::path p = work_dir() / "config.json";
        std::ofstream(p) << app_config_to_json(cfg).dump(2);
        return p;
    }();
    return path;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("help text lists the subcommands") {
    CliResult r = run_cli("--help");
    CHECK(r.code == 0);
    CHECK(r.out.find("generate") != std::string::npos);
    CHECK(r.out.find("train") != std::string::npos);
    CHECK(r.out.find("ablate") != std::string::npos);
}

TEST_CASE("running without a subcommand is a usage error") {
    CliResult r = run_cli("");
    CHECK(r.code == 1);
}

TEST_CASE("an unknown flag is a usage error") {
    CliResult r = run_cli("generate --no-such-flag");
    CHECK(r.code == 1);
}

TEST_CASE("a missing required option is a usage error") {
    CliResult r = run_cli("train --config " + q(tiny_config()));
    CHECK(r.code == 1);
}

TEST_CASE("an invalid precision is rejected at parse time") {
    CliResult r = run_cli("generate --precision f16");
    CHECK(r.code == 1);
}

TEST_CASE("a missing config file is reported with its path") {
    CliResult r = run_cli("generate --config /no/such/config.json");
    CHECK(r.code == 1);
    CHECK(r.err.find("/no/such/config.json") != std::string::npos);
}

TEST_CASE("generate writes a dataset the library can load back") {
    const fs::path data = work_dir() / "data";
    CliResult r = run_cli("generate --config " + q(tiny_config()) + " --out " + q(data));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("wrote 24 train + 16 val samples") != std::string::npos);
    Dataset ds = load_dataset<double>(data);
    CHECK(ds.train.size() == 24);
    CHECK(ds.val.size() == 16);
    CHECK(ds.spec.train_per_scene == 3);
}

TEST_CASE("the seed override changes the generated pixels") {
    const fs::path alt = work_dir() / "data_alt";
    CliResult r = run_cli("generate --config " + q(tiny_config()) + " --seed 123 --out " + q(alt));
    REQUIRE(r.code == 0);
    Dataset base = load_dataset<double>(work_dir() / "data");
    Dataset seeded = load_dataset<double>(alt);
    bool any_diff = false;
    for (std::size_t i = 0; i < base.train[0].image.numel(); ++i)
        any_diff |= base.train[0].image[i] != seeded.train[0].image[i];
    CHECK(any_diff);
}

TEST_CASE("train then eval round trip through the command line") {
    const fs::path data = work_dir() / "data";
    const fs::path run = work_dir() / "run";
    CliResult t = run_cli("train --config " + q(tiny_config()) + " --data " + q(data) +
                          " --out " + q(run));
    REQUIRE(t.code == 0);
    CHECK(t.out.find("best val top1") != std::string::npos);
    CHECK(fs::exists(run / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(run / "log.csv"));

    CliResult e = run_cli("eval --config " + q(tiny_config()) + " --data " + q(data) +
                          " --checkpoint " + q(run / "checkpoint") + " --ten-crop");
    REQUIRE(e.code == 0);
    CHECK(e.out.find("single-crop val") != std::string::npos);
    CHECK(e.out.find("ten-crop val") != std::string::npos);
    CHECK(e.out.find("crop forwards: 160") != std::string::npos);
}

TEST_CASE("evaluating a nonexistent checkpoint is a runtime error") {
    const fs::path data = work_dir() / "data";
    CliResult r = run_cli("eval --config " + q(tiny_config()) + " --data " + q(data) +
                          " --checkpoint " + q(work_dir() / "no_ckpt"));
    CHECK(r.code == 2);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("training on a missing dataset directory is a runtime error") {
    CliResult r = run_cli("train --config " + q(tiny_config()) + " --data " +
                          q(work_dir() / "no_data") + " --out " + q(work_dir() / "no_run"));
    CHECK(r.code == 2);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("cam exports a heatmap image and table") {
    Dataset ds = load_dataset<double>(work_dir() / "data");
    const fs::path img = work_dir() / "sample.fost";
    write_fost(img, ds.val[0].image);

    const fs::path out = work_dir() / "cam";
    CliResult r = run_cli("cam --checkpoint " + q(work_dir() / "run" / "checkpoint") +
                          " --image " + q(img) + " --class 3 --out " + q(out));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("class 3") != std::string::npos);
    const std::string pgm = slurp(out / "cam_class3.pgm");
    CHECK(pgm.rfind("P5", 0) == 0);
    const std::string csv = slurp(out / "cam_class3.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);  // header + 4x4 cells
    CHECK(csv.find("row,col,value") != std::string::npos);
}

TEST_CASE("a class index past the model is a runtime error in cam") {
    CliResult r = run_cli("cam --checkpoint " + q(work_dir() / "run" / "checkpoint") +
                          " --image " + q(work_dir() / "sample.fost") + " --class 12 --out " +
                          q(work_dir() / "cam_bad"));
    CHECK(r.code == 2);
}

TEST_CASE("pretrain-object reports an accuracy and writes a checkpoint") {
    const fs::path out = work_dir() / "obj";
    CliResult r = run_cli("pretrain-object --config " + q(tiny_config()) + " --data " +
                          q(work_dir() / "data") + " --out " + q(out));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("final val label accuracy") != std::string::npos);
    CHECK(fs::exists(out / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(out / "object_log.csv"));
}

TEST_CASE("the gamma sweep writes a report row per variant") {
    const fs::path out = work_dir() / "ablate";
    CliResult r = run_cli("ablate --config " + q(tiny_config()) + " --data " +
                          q(work_dir() / "data") + " --seeds 1 --sweep gamma --out " + q(out));
    REQUIRE(r.code == 0);
    const std::string report = slurp(out / "report.csv");
    CHECK(std::count(report.begin(), report.end(), '\n') == 7);  // header + 6 gammas
    CHECK(report.find("gamma-10,") != std::string::npos);
    CHECK(fs::exists(out / "summary.csv"));
}

TEST_CASE("an unknown sweep name is rejected at parse time") {
    CliResult r = run_cli("ablate --config " + q(tiny_config()) + " --data " +
                          q(work_dir() / "data") + " --sweep colors --out " +
                          q(work_dir() / "ablate_bad"));
    CHECK(r.code == 1);
}
