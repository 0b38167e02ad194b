#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "ctxchan/scenario.hpp"
#include "ctxchan/text_config.hpp"

namespace ctxchan {
namespace {

namespace fs = std::filesystem;

class ScenarioTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("ctxchan_scenario_" + std::to_string(std::random_device{}()));
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    void write(const std::string& name, const std::string& text) {
        std::ofstream(dir / name, std::ios::binary) << text;
    }

    ScenarioSpec minimal(int iterations, const std::string& out = "out") {
        write("empty.env", "# nothing on air\n");
        write("p1.conf", "provider_id = p1\nvalidity_max_s = 120\n");
        return parse_scenario("environment = empty.env\nprovider = p1.conf\niterations = " +
                                  std::to_string(iterations) + "\nbroker = 127.0.0.1:0\ntime_scale = 2000\n" +
                                  "output_dir = " + out + "\n",
                              dir);
    }

    fs::path dir;
};

TEST_F(ScenarioTest, EmptyEnvironmentRunsQuietly) {
    const auto summary = run_scenario(minimal(5));
    EXPECT_EQ(summary.exit, ScenarioExit::Ok);
    ASSERT_EQ(summary.providers.size(), 1u);
    const auto& p = summary.providers[0];
    EXPECT_EQ(p.rows, 5);
    EXPECT_EQ(p.switches, 0);
    EXPECT_EQ(p.final_channel, 1);
    EXPECT_DOUBLE_EQ(p.final_validity_s, 120.0);  // 60, 90, 120, 120, 120
    EXPECT_EQ(summary.broker_acked_updates, 5);
    EXPECT_EQ(summary.broker_cache_entries, 1u);
    for (const char* f : {"p1.csv", "p1.log", "broker_events.log", "summary.json", "summary.txt"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;

    const auto rows = parse_provider_csv(read_text_file(dir / "out" / "p1.csv"));
    ASSERT_EQ(rows.size(), 5u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.mean_current_dbm, -100.0);
        EXPECT_EQ(r.snr_gain_db, 0.0);
    }
}

TEST_F(ScenarioTest, AckedUpdatesMatchCsvRows) {
    write("env.env", "seed = 3\nnoise_jitter_db = 2\nap,1,20,10,0\nb,5,15,-30,5,1700000010,1700000030\n");
    write("a.conf", "provider_id = a\nentity_id = s1\n");
    write("b.conf", "provider_id = b\nentity_id = s2\nposition = 40,0\n");
    const auto spec = parse_scenario(
        "environment = env.env\nprovider = a.conf\nprovider = b.conf\niterations = 12\n"
        "broker = 127.0.0.1:0\ntime_scale = 2000\noutput_dir = out\n",
        dir);
    const auto summary = run_scenario(spec);
    EXPECT_EQ(summary.exit, ScenarioExit::Ok);
    int rows = 0;
    for (const auto& p : summary.providers) rows += p.rows;
    EXPECT_EQ(rows, 24);
    EXPECT_EQ(summary.broker_acked_updates, rows);
    EXPECT_EQ(summary.broker_cache_entries, 2u);

    const auto events = read_text_file(dir / "out" / "broker_events.log");
    std::size_t acks = 0;
    for (std::size_t pos = 0; (pos = events.find(" UPDATE_ACK ", pos)) != std::string::npos; ++pos) ++acks;
    EXPECT_EQ(acks, 24u);
}

TEST_F(ScenarioTest, DeterministicCsvForFixedSeed) {
    write("env.env", "noise_jitter_db = 3\nx,1,20,5,5\ny,5,18,-8,2\nz,9,12,20,-20\n");
    write("p1.conf", "provider_id = p1\nhysteresis_db = 1\n");
    auto spec = parse_scenario(
        "environment = env.env\nprovider = p1.conf\niterations = 20\nbroker = 127.0.0.1:0\n"
        "seed = 99\ntime_scale = 2000\noutput_dir = a\n",
        dir);
    run_scenario(spec);
    spec.output_dir = dir / "b";
    run_scenario(spec);
    EXPECT_EQ(read_text_file(dir / "a" / "p1.csv"), read_text_file(dir / "b" / "p1.csv"));
    spec.seed = 100;
    spec.output_dir = dir / "c";
    run_scenario(spec);
    EXPECT_NE(read_text_file(dir / "a" / "p1.csv"), read_text_file(dir / "c" / "p1.csv"));
}

TEST_F(ScenarioTest, ConfigErrorsCarryLineNumbers) {
    try {
        parse_scenario("environment = e.env\niterations = many\n", dir, "s.txt");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2);
        EXPECT_NE(std::string(e.what()).find("s.txt:2"), std::string::npos);
    }
    EXPECT_THROW(parse_scenario("provider = p.conf\n", dir), ParseError);

    write("bad.conf", "provider_id = p\nhysteresis_db = loud\n");
    write("empty.env", "");
    const auto spec = parse_scenario("environment = empty.env\nprovider = bad.conf\n", dir);
    try {
        run_scenario(spec);
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_EQ(e.code(), ScenarioExit::ConfigError);
        EXPECT_NE(std::string(e.what()).find("bad.conf:2"), std::string::npos);
    }
}

TEST_F(ScenarioTest, DuplicateProviderIdsRejected) {
    write("empty.env", "");
    write("p.conf", "provider_id = same\n");
    const auto spec = parse_scenario("environment = empty.env\nprovider = p.conf\nprovider = p.conf\n", dir);
    try {
        run_scenario(spec);
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_EQ(e.code(), ScenarioExit::ConfigError);
    }
}

TEST_F(ScenarioTest, PlotSeries) {
    std::string csv(kProviderCsvHeader);
    csv += '\n';
    for (int i = 1; i <= 100; ++i)
        csv += std::to_string(i) + "," + std::to_string(1000 + 5 * i) + ",13,9,1,-55.0,-100.0," +
               std::to_string(40 + i % 7) + ".5,10.0\n";
    write("p.csv", csv);
    EXPECT_EQ(plot_series(dir / "p.csv", dir / "p.dat"), 100u);
    const auto data = read_text_file(dir / "p.dat");
    EXPECT_EQ(std::count(data.begin(), data.end(), '\n') - std::count(data.begin(), data.end(), '#'), 100);
    EXPECT_NE(data.find("1 41.5\n"), std::string::npos);

    EXPECT_EQ(plot_series(dir / "p.csv", dir / "p.svg"), 100u);
    const auto svg = read_text_file(dir / "p.svg");
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_EQ(plot_series(dir / "p.csv", dir / "p2.svg"), 100u);
    EXPECT_EQ(read_text_file(dir / "p2.svg"), svg);

    write("empty.csv", "");
    EXPECT_THROW(plot_series(dir / "empty.csv", dir / "e.dat"), ParseError);
    write("header.csv", std::string(kProviderCsvHeader) + "\n");
    EXPECT_THROW(plot_series(dir / "header.csv", dir / "e.dat"), ParseError);
    write("bad.csv", std::string(kProviderCsvHeader) + "\n1,2,3\n");
    try {
        plot_series(dir / "bad.csv", dir / "e.dat");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2);
    }
}

TEST_F(ScenarioTest, SummaryJsonListsProviders) {
    const auto summary = run_scenario(minimal(3));
    const auto json = summary.to_json();
    EXPECT_NE(json.find("\"provider_id\": \"p1\""), std::string::npos);
    EXPECT_NE(json.find("\"rows\": 3"), std::string::npos);
    EXPECT_NE(summary.to_table().find("p1"), std::string::npos);
}

TEST(ShippedScenarios, Parse) {
    const fs::path root = CTXCHAN_SOURCE_DIR;
    for (const char* name : {"factory_floor.txt", "hidden_node.txt"}) {
        const auto spec = load_scenario(root / "scenarios" / name);
        EXPECT_TRUE(fs::exists(spec.environment_file)) << name;
        for (const auto& p : spec.providers) EXPECT_NO_THROW(load_provider_config(p)) << p;
        EXPECT_NO_THROW(load_environment(spec.environment_file));
    }
}

}  // namespace
}  // namespace ctxchan
