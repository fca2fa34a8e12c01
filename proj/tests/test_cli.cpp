#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + FLOODCNN_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 1") {
    CHECK(run_cli("") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("--variant hilly simulate") == 1);
    CHECK(run_cli("predict --model cnn") == 1);
    CHECK(run_cli("predict --model tree --event a") == 1);
}

TEST_CASE("help exits with 0") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("simulate --help") == 0);
}

TEST_CASE("data errors exit with 2") {
    CHECK(run_cli("--config /nonexistent/config.txt simulate") == 2);

    const fs::path dir = fs::temp_directory_path() / "floodcnn_test_cli";
    fs::remove_all(dir);
    REQUIRE(run_cli("make-demo --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "config.txt"));
    CHECK(fs::exists(dir / "dem.asc"));

    const std::string cfg = "--config " + (dir / "config.txt").string();
    CHECK(run_cli(cfg + " --set no_such_key=1 simulate") == 2);
    CHECK(run_cli(cfg + " --set learning_rate build-dataset") == 2);
    CHECK(run_cli(cfg + " train-cnn") == 2);
    CHECK(run_cli(cfg + " simulate --event no_such_event") == 2);
}

}  // TEST_SUITE
