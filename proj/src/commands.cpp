#include "adaptcl/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "adaptcl/cil.hpp"
#include "adaptcl/config.hpp"
#include "adaptcl/error.hpp"
#include "adaptcl/gradsuite.hpp"
#include "adaptcl/serialize.hpp"

namespace adaptcl {

namespace {

using nlohmann::json;

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

int guard(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

std::string report_csv(const RunReport& r) {
    std::string out = "task,last,avg,params,seed\n";
    for (std::size_t t = 0; t < r.last.size(); ++t) {
        out += std::to_string(t + 1) + "," + fmt4(r.last[t]) + "," + fmt4(r.avg[t]) + "," +
               std::to_string(r.trainable_params) + "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

json report_json(const RunReport& r) {
    json tasks = json::array();
    for (std::size_t t = 0; t < r.last.size(); ++t) {
        tasks.push_back({{"task", t + 1}, {"last", r.last[t]}, {"avg", r.avg[t]}});
    }
    return json{{"fingerprint", r.fingerprint},
                {"seed", r.seed},
                {"params", r.trainable_params},
                {"wall_seconds", r.wall_seconds},
                {"tasks", tasks}};
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write '" + path + "'");
    }
    out << content;
}

void save_model(const std::string& path, ProtocolResult& result) {
    std::vector<TensorRecord> records;
    for (auto& [name, t] : result.encoder.named_parameters()) {
        records.push_back(to_record(name, *t));
    }
    for (auto& [name, t] : result.adapters.named_parameters()) {
        records.push_back(to_record(name, *t));
    }
    for (auto& rec : result.classifier.to_records()) {
        records.push_back(std::move(rec));
    }
    write_siml(path, std::move(records));
}

} // namespace

std::size_t sweep_threads() {
    if (const char* env = std::getenv("ADAPTCL_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::uint64_t seed, const std::string& out_dir, bool emit_json) {
    return guard([&]() {
        auto cfg = load_run_config(config_path, overrides);
        auto result = run_spec(cfg.spec, seed, cfg.fingerprint);
        std::filesystem::create_directories(out_dir);
        write_file(out_dir + "/report.csv", report_csv(result.report));
        const json doc = report_json(result.report);
        write_file(out_dir + "/report.json", doc.dump(2) + "\n");
        save_model(out_dir + "/model.siml", result);
        if (emit_json) {
            std::cout << doc.dump(2) << "\n";
        } else {
            for (std::size_t t = 0; t < result.report.last.size(); ++t) {
                std::cout << "task " << t + 1 << "  last " << fmt4(result.report.last[t])
                          << "  avg " << fmt4(result.report.avg[t]) << "\n";
            }
        }
        return 0;
    });
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& axis_name, const std::string& grid, std::uint64_t seed,
              const std::string& out_dir, bool emit_json) {
    return guard([&]() {
        auto cfg = load_run_config(config_path, overrides);
        const SweepAxis axis = parse_sweep_axis(axis_name);
        const auto entries = expand_grid(axis, grid);
        const auto points = sweep(axis, entries, cfg.spec, seed, cfg.fingerprint, sweep_threads());

        std::string csv = "axis,value,task,last,avg,params,seed\n";
        json jpoints = json::array();
        for (const auto& p : points) {
            for (std::size_t t = 0; t < p.report.last.size(); ++t) {
                csv += axis_name + "," + p.value + "," + std::to_string(t + 1) + "," +
                       fmt4(p.report.last[t]) + "," + fmt4(p.report.avg[t]) + "," +
                       std::to_string(p.report.trainable_params) + "," +
                       std::to_string(p.report.seed) + "\n";
            }
            json jp = report_json(p.report);
            jp["value"] = p.value;
            jp["axis"] = axis_name;
            jpoints.push_back(jp);
        }
        std::filesystem::create_directories(out_dir);
        write_file(out_dir + "/sweep.csv", csv);
        const json doc = json{{"axis", axis_name}, {"points", jpoints}};
        write_file(out_dir + "/sweep.json", doc.dump(2) + "\n");
        if (emit_json) {
            std::cout << doc.dump(2) << "\n";
        } else {
            std::cout << csv;
        }
        return 0;
    });
}

int cmd_gradcheck(const std::string& dims, double tol, double tol32) {
    return guard([&]() {
        std::size_t d = 8, blocks = 2, heads = 2, bottleneck = 2;
        if (!dims.empty()) {
            std::size_t vals[4] = {d, blocks, heads, bottleneck};
            std::size_t idx = 0, pos = 0;
            while (pos <= dims.size() && idx < 4) {
                const auto comma = dims.find(',', pos);
                const auto end = comma == std::string::npos ? dims.size() : comma;
                const std::string item = dims.substr(pos, end - pos);
                try {
                    std::size_t used = 0;
                    const long long v = std::stoll(item, &used);
                    if (used != item.size() || v < 1) throw std::invalid_argument(item);
                    vals[idx] = static_cast<std::size_t>(v);
                } catch (const std::exception&) {
                    throw ConfigError("--dims: bad entry '" + item + "', expected D,B,heads[,R]");
                }
                ++idx;
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            d = vals[0];
            blocks = vals[1];
            heads = vals[2];
            bottleneck = vals[3];
        }
        EncoderConfig cfg = default_gradcheck_config();
        cfg.embed_dim = d;
        cfg.num_blocks = blocks;
        cfg.num_heads = heads;
        cfg.validate();

        const auto r64 = run_gradient_suite<double>(1e-4, tol, 20260809, cfg, bottleneck);
        const auto r32 =
            run_gradient_suite<float>(1e-2f, static_cast<float>(tol32), 20260809, cfg, bottleneck);
        std::printf("64-bit: worst rel error %.3e (%s) tol %.1e -> %s\n", r64.worst_rel_error,
                    r64.worst_case.c_str(), tol, r64.pass ? "pass" : "FAIL");
        std::printf("32-bit: worst rel error %.3e (%s) tol %.1e -> %s\n",
                    static_cast<double>(r32.worst_rel_error), r32.worst_case.c_str(), tol32,
                    r32.pass ? "pass" : "FAIL");
        return (r64.pass && r32.pass) ? 0 : 1;
    });
}

// Merges train runs (accuracy-vs-task series) and sweep outputs
// (accuracy-vs-axis series, taking each grid point's final task).
int cmd_report(const std::vector<std::string>& run_dirs, const std::string& format, bool force) {
    return guard([&]() {
        if (run_dirs.empty()) {
            throw ConfigError("report: no run directories given");
        }
        if (format != "csv" && format != "json" && format != "gnuplot-data") {
            throw ConfigError("report: unknown format '" + format + "'");
        }
        struct Run {
            std::string id;
            json doc;
            bool is_sweep = false;
        };
        std::vector<Run> runs;
        std::vector<std::string> fingerprints;
        for (const auto& dir : run_dirs) {
            const std::string id = std::filesystem::path(dir).filename().string();
            if (std::filesystem::exists(dir + "/report.json")) {
                std::ifstream in(dir + "/report.json");
                json doc = json::parse(in, nullptr, true, true);
                fingerprints.push_back(doc.value("fingerprint", ""));
                runs.push_back({id, std::move(doc), false});
            } else if (std::filesystem::exists(dir + "/sweep.json")) {
                std::ifstream in(dir + "/sweep.json");
                json doc = json::parse(in, nullptr, true, true);
                for (const auto& p : doc["points"]) {
                    fingerprints.push_back(p.value("fingerprint", ""));
                }
                runs.push_back({id, std::move(doc), true});
            } else {
                throw Error("no report.json or sweep.json in '" + dir + "'");
            }
        }
        for (const auto& fp : fingerprints) {
            if (fp != fingerprints[0] && !force) {
                throw ConfigError("report: fingerprint mismatch between runs (use --force to "
                                  "merge anyway)");
            }
        }
        if (format == "json") {
            json merged = json::array();
            for (const auto& r : runs) {
                json doc = r.doc;
                doc["run"] = r.id;
                merged.push_back(doc);
            }
            std::cout << merged.dump(2) << "\n";
            return 0;
        }
        const bool single = runs.size() == 1;
        if (format == "csv") {
            for (const auto& r : runs) {
                if (!r.is_sweep) {
                    std::cout << (single ? "task,last,avg,params,seed\n"
                                         : "run,task,last,avg,params,seed\n");
                    for (const auto& task : r.doc["tasks"]) {
                        if (!single) std::cout << r.id << ",";
                        std::cout << task["task"] << "," << fmt4(task["last"].get<double>())
                                  << "," << fmt4(task["avg"].get<double>()) << ","
                                  << r.doc["params"].get<std::uint64_t>() << ","
                                  << r.doc["seed"].get<std::uint64_t>() << "\n";
                    }
                } else {
                    std::cout << (single ? "axis,value,last,avg,params\n"
                                         : "run,axis,value,last,avg,params\n");
                    for (const auto& p : r.doc["points"]) {
                        if (!single) std::cout << r.id << ",";
                        const auto& tasks = p["tasks"];
                        const auto& last_task = tasks[tasks.size() - 1];
                        std::cout << p["axis"].get<std::string>() << ","
                                  << p["value"].get<std::string>() << ","
                                  << fmt4(last_task["last"].get<double>()) << ","
                                  << fmt4(last_task["avg"].get<double>()) << ","
                                  << p["params"].get<std::uint64_t>() << "\n";
                    }
                }
            }
        } else { // gnuplot-data: one block per series
            for (const auto& r : runs) {
                if (!r.is_sweep) {
                    std::cout << "# run task last avg\n";
                    for (const auto& task : r.doc["tasks"]) {
                        std::cout << r.id << " " << task["task"] << " "
                                  << fmt4(task["last"].get<double>()) << " "
                                  << fmt4(task["avg"].get<double>()) << "\n";
                    }
                } else {
                    std::cout << "# run axis value last avg\n";
                    for (const auto& p : r.doc["points"]) {
                        const auto& tasks = p["tasks"];
                        const auto& last_task = tasks[tasks.size() - 1];
                        std::cout << r.id << " " << p["axis"].get<std::string>() << " "
                                  << p["value"].get<std::string>() << " "
                                  << fmt4(last_task["last"].get<double>()) << " "
                                  << fmt4(last_task["avg"].get<double>()) << "\n";
                    }
                }
                std::cout << "\n";
            }
        }
        return 0;
    });
}

} // namespace adaptcl
