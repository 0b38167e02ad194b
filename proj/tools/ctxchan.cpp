// ctxchan command-line front end.
//
//   ctxchan run --scenario FILE [--iterations N] [--seed S] [--out DIR]
//   ctxchan plot --csv FILE --out FILE
//   ctxchan broker [--listen HOST:PORT] [--events FILE]
//   ctxchan provider --config FILE (--environment FILE | --replay FILE) [--csv FILE] [--iterations N]
//   ctxchan scan --environment FILE --x X --y Y [--time T]
//   ctxchan consume --broker HOST:PORT --entity TYPE/ID --scope NAME [--query]

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "ctxchan/broker_server.hpp"
#include "ctxchan/provider_agent.hpp"
#include "ctxchan/rf_environment.hpp"
#include "ctxchan/scenario.hpp"
#include "ctxchan/wire_protocol.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int cmd_run(const std::string& scenario_file, std::optional<int> iterations, std::optional<std::uint64_t> seed,
            std::optional<std::string> out) {
    using ctxchan::ScenarioExit;
    try {
        auto spec = ctxchan::load_scenario(scenario_file);
        if (iterations) spec.iterations = *iterations;
        if (seed) spec.seed = *seed;
        if (out) spec.output_dir = *out;
        const auto summary = ctxchan::run_scenario(spec);
        std::cout << summary.to_table();
        if (summary.exit == ScenarioExit::DeadlineExceeded) std::cerr << "error: deadline exceeded\n";
        return static_cast<int>(summary.exit);
    } catch (const ctxchan::ScenarioError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ScenarioExit::ConfigError);
    }
}

int cmd_plot(const std::string& csv, const std::string& out) {
    try {
        const auto n = ctxchan::plot_series(csv, out);
        std::cout << "wrote " << n << " points to " << out << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_broker(const std::string& listen, const std::string& events_file) {
    std::ofstream events_out;
    std::ostream* events = &std::cout;
    if (!events_file.empty()) {
        events_out.open(events_file, std::ios::app);
        events = &events_out;
    }
    ctxchan::BrokerServerOptions options;
    try {
        options.listen = ctxchan::net::parse_endpoint(listen);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    options.events = [events](std::string_view line) { *events << line << std::endl; };
    ctxchan::BrokerServer server(options);
    try {
        server.start();
    } catch (const ctxchan::AddressInUse& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    std::cerr << "broker listening on " << server.endpoint().to_string() << '\n';
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return 0;
}

int cmd_provider(const std::string& config, const std::string& environment, const std::string& replay,
                 const std::string& csv_file, std::optional<int> iterations) {
    ctxchan::ProviderConfig cfg;
    std::unique_ptr<ctxchan::ScanSource> scans;
    try {
        cfg = ctxchan::load_provider_config(config);
        if (!environment.empty())
            scans = std::make_unique<ctxchan::SimulatedScanSource>(ctxchan::load_environment(environment),
                                                                   cfg.position);
        else if (!replay.empty())
            scans = std::make_unique<ctxchan::ReplayScanSource>(ctxchan::ReplayScanSource::load(replay));
        else
            throw std::runtime_error("one of --environment or --replay is required");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ctxchan::ProviderExit::ConfigError);
    }
    std::ofstream csv_out;
    std::ostream* csv = &std::cout;
    if (!csv_file.empty()) {
        csv_out.open(csv_file, std::ios::binary);
        csv = &csv_out;
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    ctxchan::SystemClock clock;
    ctxchan::ProviderRun run;
    run.scans = scans.get();
    run.clock = &clock;
    run.csv = csv;
    run.log = &std::cerr;
    run.iterations = iterations;
    run.stop = &g_stop;
    const auto result = ctxchan::run_provider(cfg, run);
    if (result.exit != ctxchan::ProviderExit::Completed)
        std::cerr << "provider " << cfg.provider_id << ": " << ctxchan::to_string(result.exit) << '\n';
    return static_cast<int>(result.exit);
}

int cmd_scan(const std::string& environment, double x, double y, std::optional<long long> time) {
    try {
        const auto env = ctxchan::load_environment(environment);
        const auto t = time.value_or(ctxchan::system_now());
        std::cout << ctxchan::format_scan(ctxchan::scan(env, {x, y}, t));
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_consume(const std::string& broker, const std::string& entity, const std::string& scope, bool query) {
    try {
        const auto slash = entity.find('/');
        if (slash == std::string::npos) throw std::invalid_argument("--entity must be TYPE/ID");
        ctxchan::wire::ConsumerRequest req{
            query ? ctxchan::wire::ConsumerRequest::Verb::Query : ctxchan::wire::ConsumerRequest::Verb::Subscribe,
            ctxchan::EntityRef{entity.substr(0, slash), entity.substr(slash + 1)}, scope};
        auto conn = ctxchan::net::LineConnection::connect(ctxchan::net::parse_endpoint(broker),
                                                          std::chrono::milliseconds(2000));
        conn.send(ctxchan::wire::encode_consumer_request(req));
        std::signal(SIGINT, on_signal);
        while (!g_stop) {
            auto line = conn.read_line(std::chrono::milliseconds(200));
            if (!line) continue;
            std::cout << *line << std::endl;
            if (query) return *line == "MISS" ? 4 : 0;
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interference-aware channel selection over a context broker"};
    app.require_subcommand(1);

    std::string scenario;
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    auto* run = app.add_subcommand("run", "Run a scenario: broker plus providers over loopback TCP");
    run->add_option("--scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("--iterations", iterations, "Update cycles per provider");
    run->add_option("--seed", seed, "Environment RNG seed");
    run->add_option("--out", out_dir, "Output directory");

    std::string csv, plot_out;
    auto* plot = app.add_subcommand("plot", "Render the SNR-gain series of a provider CSV");
    plot->add_option("--csv", csv, "Provider CSV")->required();
    plot->add_option("--out", plot_out, "Output file (.svg for SVG, otherwise gnuplot data)")->required();

    std::string listen = "127.0.0.1:7471", events;
    auto* broker = app.add_subcommand("broker", "Run a standalone broker");
    broker->add_option("--listen", listen, "Listen address");
    broker->add_option("--events", events, "Append the event log to this file instead of stdout");

    std::string config, environment, replay, provider_csv;
    std::optional<int> provider_iterations;
    auto* provider = app.add_subcommand("provider", "Run a standalone provider agent");
    provider->add_option("--config", config, "Provider configuration file")->required();
    provider->add_option("--environment", environment, "Simulated environment file");
    provider->add_option("--replay", replay, "Scan replay file");
    provider->add_option("--csv", provider_csv, "Write the event CSV here instead of stdout");
    provider->add_option("--iterations", provider_iterations, "Stop after N updates");

    double x = 0.0, y = 0.0;
    std::optional<long long> scan_time;
    std::string scan_env;
    auto* scan = app.add_subcommand("scan", "Print one simulated scan in replay format");
    scan->add_option("--environment", scan_env, "Environment file")->required();
    scan->add_option("--x", x, "Receiver x (m)");
    scan->add_option("--y", y, "Receiver y (m)");
    scan->add_option("--time", scan_time, "UNIX time of the scan");

    std::string consume_broker = "127.0.0.1:7471", entity, scope = "interference";
    bool query = false;
    auto* consume = app.add_subcommand("consume", "Subscribe to (or query) an entity-scope pair");
    consume->add_option("--broker", consume_broker, "Broker address");
    consume->add_option("--entity", entity, "TYPE/ID")->required();
    consume->add_option("--scope", scope, "Scope name");
    consume->add_flag("--query", query, "Query once instead of subscribing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Usage errors count as configuration errors.
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (*run) return cmd_run(scenario, iterations, seed, out_dir);
    if (*plot) return cmd_plot(csv, plot_out);
    if (*broker) return cmd_broker(listen, events);
    if (*provider) return cmd_provider(config, environment, replay, provider_csv, provider_iterations);
    if (*scan) return cmd_scan(scan_env, x, y, scan_time);
    if (*consume) return cmd_consume(consume_broker, entity, scope, query);
    return 1;
}
