#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "piheart/bvp.hpp"
#include "piheart/errors.hpp"
#include "piheart/hr_estimator.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Estimate heart rate from a BVP CSV with a sliding 30 s STFT"};
    std::string in = "-";
    std::string mode_name = "magnitude";
    bool jsonl = false;
    app.add_option("--in", in, "Input CSV (t_ms,value), '-' for stdin")->capture_default_str();
    app.add_option("--mode", mode_name, "Bin selection: magnitude or real-part")
        ->check(CLI::IsMember({"magnitude", "real-part"}))
        ->capture_default_str();
    app.add_flag("--emit-jsonl", jsonl, "One JSON object per estimate instead of a table");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto mode = piheart::parse_estimator_mode(mode_name);
        std::vector<piheart::BvpSample> samples;
        if (in == "-") {
            samples = piheart::parse_bvp_csv(std::cin);
        } else {
            samples = piheart::replay(in);
        }
        piheart::SlidingWindow window;
        if (!jsonl) {
            std::cout << "t_ms\tbpm\tbin\n";
        }
        for (const auto& s : samples) {
            std::optional<piheart::HrEstimate> e;
            try {
                e = window.push_sample(s, mode);
            } catch (const piheart::StreamError& err) {
                // A break in the recording starts a fresh window.
                std::cerr << "hr-estimate: " << err.what() << "; restarting window\n";
                window.reset();
                e = window.push_sample(s, mode);
            }
            if (!e) {
                continue;
            }
            if (jsonl) {
                std::cout << nlohmann::ordered_json{{"t_ms", e->window_end_t},
                                                    {"bpm", e->bpm},
                                                    {"bin", e->bin_index},
                                                    {"mode", piheart::to_string(mode)}}
                                 .dump()
                          << "\n";
            } else {
                std::cout << e->window_end_t << "\t" << e->bpm << "\t" << e->bin_index << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "hr-estimate: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
