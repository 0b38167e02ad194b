#include "ctxchan/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ctxchan/broker_server.hpp"
#include "ctxchan/text_config.hpp"
#include "ctxchan/wire_protocol.hpp"

namespace ctxchan {

void ScenarioSpec::validate() const {
    if (iterations < 1) throw DomainError("iterations must be >= 1");
    if (providers.empty()) throw DomainError("scenario needs at least one provider");
    if (!(time_scale > 0.0)) throw DomainError("time_scale must be positive");
}

ScenarioSpec parse_scenario(std::string_view text, const std::filesystem::path& base_dir, const std::string& origin) {
    ScenarioSpec spec;
    bool have_env = false;
    auto resolve = [&](std::string_view v) {
        std::filesystem::path p{std::string(v)};
        return p.is_absolute() ? p : base_dir / p;
    };
    for_each_content_line(text, [&](std::string_view line, int n) {
        if (line.find('=') == std::string_view::npos) throw ParseError(origin, n, "expected key = value");
        auto [key, value] = split_key_value(line);
        auto integer = [&]() {
            auto v = wire::parse_integer(value);
            if (!v) throw ParseError(origin, n, "bad integer for " + std::string(key));
            return *v;
        };
        if (key == "environment") {
            spec.environment_file = resolve(value);
            have_env = true;
        } else if (key == "provider") spec.providers.push_back(resolve(value));
        else if (key == "iterations") spec.iterations = static_cast<int>(integer());
        else if (key == "seed") spec.seed = static_cast<std::uint64_t>(integer());
        else if (key == "start_time") spec.start_time = integer();
        else if (key == "output_dir") spec.output_dir = resolve(value);
        else if (key == "time_scale") {
            auto v = wire::parse_decimal(value);
            if (!v) throw ParseError(origin, n, "bad decimal for time_scale");
            spec.time_scale = *v;
        } else if (key == "broker") {
            try {
                spec.broker = net::parse_endpoint(value);
            } catch (const std::invalid_argument& e) {
                throw ParseError(origin, n, e.what());
            }
        } else
            throw ParseError(origin, n, "unknown key '" + std::string(key) + "'");
    });
    if (!have_env) throw ParseError(origin, 0, "missing 'environment'");
    try {
        spec.validate();
    } catch (const DomainError& e) {
        throw ParseError(origin, 0, e.what());
    }
    return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
    return parse_scenario(read_text_file(path), path.parent_path(), path.string());
}

std::vector<ProviderCsvRow> parse_provider_csv(std::string_view text, const std::string& origin) {
    std::vector<ProviderCsvRow> rows;
    bool header = false;
    for_each_content_line(text, [&](std::string_view line, int n) {
        if (!header) {
            if (line != kProviderCsvHeader) throw ParseError(origin, n, "unexpected CSV header");
            header = true;
            return;
        }
        const auto f = wire::split(line, ',');
        if (f.size() != 9) throw ParseError(origin, n, "expected 9 columns, got " + std::to_string(f.size()));
        auto integer = [&](std::size_t i) {
            auto v = wire::parse_integer(f[i]);
            if (!v) throw ParseError(origin, n, "column " + std::to_string(i + 1) + " is not an integer");
            return *v;
        };
        auto decimal = [&](std::size_t i) {
            auto v = wire::parse_decimal(f[i]);
            if (!v) throw ParseError(origin, n, "column " + std::to_string(i + 1) + " is not a decimal");
            return *v;
        };
        ProviderCsvRow r;
        r.iteration = static_cast<int>(integer(0));
        r.timestamp = integer(1);
        r.current_channel = static_cast<int>(integer(2));
        r.recommended_channel = static_cast<int>(integer(3));
        r.switch_flag = static_cast<int>(integer(4));
        r.mean_current_dbm = decimal(5);
        r.mean_recommended_dbm = decimal(6);
        r.snr_gain_db = decimal(7);
        r.validity_s = decimal(8);
        rows.push_back(r);
    });
    if (!header) throw ParseError(origin, 1, "empty CSV");
    return rows;
}

// ---------------------------------------------------------------------------------------------

std::string ScenarioSummary::to_json() const {
    nlohmann::ordered_json j;
    j["exit_code"] = static_cast<int>(exit);
    j["broker_acked_updates"] = broker_acked_updates;
    j["broker_cache_entries"] = broker_cache_entries;
    auto& arr = j["providers"] = nlohmann::ordered_json::array();
    for (const auto& p : providers) {
        arr.push_back({{"provider_id", p.provider_id},
                       {"exit", to_string(p.exit)},
                       {"rows", p.rows},
                       {"switches", p.switches},
                       {"recommendation_changes", p.recommendation_changes},
                       {"mean_snr_gain_db", p.mean_snr_gain_db},
                       {"max_snr_gain_db", p.max_snr_gain_db},
                       {"final_channel", p.final_channel},
                       {"final_recommendation", p.final_recommendation},
                       {"final_validity_s", p.final_validity_s},
                       {"csv", p.csv.filename().string()}});
    }
    return j.dump(2) + "\n";
}

std::string ScenarioSummary::to_table() const {
    std::ostringstream out;
    out << std::left << std::setw(16) << "provider" << std::setw(12) << "exit" << std::right << std::setw(6)
        << "rows" << std::setw(10) << "switches" << std::setw(12) << "rec.chg" << std::setw(14) << "mean gain dB"
        << std::setw(13) << "max gain dB" << std::setw(8) << "final" << std::setw(6) << "rec" << '\n';
    out << std::fixed << std::setprecision(2);
    for (const auto& p : providers) {
        out << std::left << std::setw(16) << p.provider_id << std::setw(12)
            << (p.exit == ProviderExit::Completed ? "ok" : "failed") << std::right << std::setw(6) << p.rows
            << std::setw(10) << p.switches << std::setw(12) << p.recommendation_changes << std::setw(14)
            << p.mean_snr_gain_db << std::setw(13) << p.max_snr_gain_db << std::setw(8) << p.final_channel
            << std::setw(6) << p.final_recommendation << '\n';
    }
    out << "broker: " << broker_acked_updates << " acknowledged updates, " << broker_cache_entries
        << " cache entries at end\n";
    return out.str();
}

namespace {

ProviderSummary summarize(const std::string& id, const ProviderResult& result,
                          const std::vector<ProviderCsvRow>& rows) {
    ProviderSummary s;
    s.provider_id = id;
    s.exit = result.exit;
    s.final_channel = result.final_channel ? result.final_channel->number() : 0;
    s.rows = static_cast<int>(rows.size());
    double total = 0.0;
    s.max_snr_gain_db = rows.empty() ? 0.0 : rows.front().snr_gain_db;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        s.switches += r.switch_flag;
        if (i > 0 && r.recommended_channel != rows[i - 1].recommended_channel) ++s.recommendation_changes;
        total += r.snr_gain_db;
        s.max_snr_gain_db = std::max(s.max_snr_gain_db, r.snr_gain_db);
    }
    if (!rows.empty()) {
        s.mean_snr_gain_db = total / static_cast<double>(rows.size());
        const auto& last = rows.back();
        s.final_recommendation = last.recommended_channel;
        s.final_validity_s = last.validity_s;
    }
    return s;
}

struct ProviderTask {
    ProviderConfig cfg;
    std::unique_ptr<SimulatedScanSource> scans;
    std::ostringstream csv;
    std::ostringstream log;
    ProviderResult result;
};

}  // namespace

ScenarioSummary run_scenario(const ScenarioSpec& spec) {
    try {
        spec.validate();
    } catch (const DomainError& e) {
        throw ScenarioError(ScenarioExit::ConfigError, e.what());
    }

    EnvironmentSpec env;
    std::vector<std::unique_ptr<ProviderTask>> tasks;
    try {
        env = load_environment(spec.environment_file);
        if (spec.seed) env.rng_seed = *spec.seed;
        std::set<std::string> ids;
        for (const auto& path : spec.providers) {
            auto task = std::make_unique<ProviderTask>();
            task->cfg = load_provider_config(path);
            if (!ids.insert(task->cfg.provider_id).second)
                throw ParseError(path.string(), 0, "duplicate provider_id '" + task->cfg.provider_id + "'");
            task->scans = std::make_unique<SimulatedScanSource>(env, task->cfg.position);
            tasks.push_back(std::move(task));
        }
    } catch (const std::runtime_error& e) {
        throw ScenarioError(ScenarioExit::ConfigError, e.what());
    }

    std::error_code ec;
    std::filesystem::create_directories(spec.output_dir, ec);
    if (ec) throw ScenarioError(ScenarioExit::ConfigError, "cannot create " + spec.output_dir.string());

    ScaledClock clock(spec.start_time, spec.time_scale);
    std::mutex events_mutex;
    std::ostringstream events;
    int acked = 0;
    BrokerServerOptions options;
    options.listen = spec.broker;
    options.clock = [&clock] { return clock.now(); };
    options.events = [&](std::string_view line) {
        std::lock_guard lock(events_mutex);
        events << line << '\n';
        if (line.find(" UPDATE_ACK ") != std::string_view::npos) ++acked;
    };
    BrokerServer server(options);
    try {
        server.start();
    } catch (const AddressInUse& e) {
        throw ScenarioError(ScenarioExit::ComponentFailure, e.what());
    } catch (const net::NetError& e) {
        throw ScenarioError(ScenarioExit::ComponentFailure, std::string("broker failed to start: ") + e.what());
    }

    double max_interval = 0.0;
    for (const auto& t : tasks) max_interval = std::max(max_interval, t->cfg.scan_interval_s);
    const double deadline_s =
        spec.deadline_s.value_or(spec.iterations * max_interval / spec.time_scale + 30.0);

    std::atomic<bool> stop{false};
    std::mutex done_mutex;
    std::condition_variable done_cv;
    std::size_t done = 0;
    std::vector<std::thread> threads;
    for (auto& t : tasks) {
        t->cfg.broker = server.endpoint();
        threads.emplace_back([&, task = t.get()] {
            ProviderRun run;
            run.scans = task->scans.get();
            run.clock = &clock;
            run.csv = &task->csv;
            run.log = &task->log;
            run.iterations = spec.iterations;
            run.start_time = spec.start_time;
            run.stop = &stop;
            task->result = run_provider(task->cfg, run);
            std::lock_guard lock(done_mutex);
            ++done;
            done_cv.notify_all();
        });
    }

    bool deadline_hit = false;
    {
        std::unique_lock lock(done_mutex);
        const auto limit = std::chrono::steady_clock::now() +
                           std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                               std::chrono::duration<double>(deadline_s));
        deadline_hit = !done_cv.wait_until(lock, limit, [&] { return done == tasks.size(); });
    }
    if (deadline_hit) stop = true;
    for (auto& th : threads) th.join();
    server.stop();

    ScenarioSummary summary;
    summary.output_dir = spec.output_dir;
    summary.broker_cache_entries = server.broker().cache_size();
    {
        std::lock_guard lock(events_mutex);
        summary.broker_acked_updates = acked;
        std::ofstream(spec.output_dir / "broker_events.log", std::ios::binary) << events.str();
    }

    bool failed = false;
    for (auto& t : tasks) {
        const auto csv_path = spec.output_dir / (t->cfg.provider_id + ".csv");
        std::ofstream(csv_path, std::ios::binary) << t->csv.str();
        std::ofstream(spec.output_dir / (t->cfg.provider_id + ".log"), std::ios::binary) << t->log.str();
        std::vector<ProviderCsvRow> rows;
        if (!t->csv.str().empty()) rows = parse_provider_csv(t->csv.str(), csv_path.string());
        auto s = summarize(t->cfg.provider_id, t->result, rows);
        s.csv = csv_path;
        if (t->result.exit != ProviderExit::Completed || s.rows != spec.iterations) failed = true;
        summary.providers.push_back(std::move(s));
    }
    summary.exit = deadline_hit ? ScenarioExit::DeadlineExceeded
                                : (failed ? ScenarioExit::ComponentFailure : ScenarioExit::Ok);

    std::ofstream(spec.output_dir / "summary.json", std::ios::binary) << summary.to_json();
    std::ofstream(spec.output_dir / "summary.txt", std::ios::binary) << summary.to_table();
    return summary;
}

// ---------------------------------------------------------------------------------------------

std::string series_data(const std::vector<ProviderCsvRow>& rows) {
    std::string out = "# iteration snr_gain_db\n";
    for (const auto& r : rows) out += std::to_string(r.iteration) + " " + wire::format_decimal(r.snr_gain_db) + "\n";
    return out;
}

std::string series_svg(const std::vector<ProviderCsvRow>& rows, const std::string& title) {
    constexpr double width = 800, height = 400, margin = 50;
    double lo = 0.0, hi = 1.0;
    for (const auto& r : rows) {
        lo = std::min(lo, r.snr_gain_db);
        hi = std::max(hi, r.snr_gain_db);
    }
    const double n = std::max<double>(1.0, static_cast<double>(rows.size() - 1));
    auto px = [&](std::size_t i) { return margin + (width - 2 * margin) * static_cast<double>(i) / n; };
    auto py = [&](double v) { return height - margin - (height - 2 * margin) * (v - lo) / (hi - lo); };

    std::ostringstream svg;
    svg << std::fixed << std::setprecision(2);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"25\" font-family=\"sans-serif\" font-size=\"14\">" << title
        << "</text>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << py(0.0) << "\" x2=\"" << width - margin << "\" y2=\"" << py(0.0)
        << "\" stroke=\"gray\"/>\n";
    svg << "<text x=\"5\" y=\"" << py(hi) << "\" font-family=\"sans-serif\" font-size=\"10\">" << hi << " dB</text>\n";
    svg << "<text x=\"5\" y=\"" << py(lo) << "\" font-family=\"sans-serif\" font-size=\"10\">" << lo << " dB</text>\n";
    svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < rows.size(); ++i) svg << (i ? " " : "") << px(i) << "," << py(rows[i].snr_gain_db);
    svg << "\"/>\n</svg>\n";
    return svg.str();
}

std::size_t plot_series(const std::filesystem::path& csv, const std::filesystem::path& out) {
    const auto rows = parse_provider_csv(read_text_file(csv), csv.string());
    if (rows.empty()) throw ParseError(csv.string(), 2, "CSV has no data rows");
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    if (out.extension() == ".svg")
        f << series_svg(rows, "SNR gain per measurement: " + csv.stem().string());
    else
        f << series_data(rows);
    return rows.size();
}

}  // namespace ctxchan
