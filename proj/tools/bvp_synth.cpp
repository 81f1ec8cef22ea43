#include <iostream>

#include "CLI11.hpp"
#include "piheart/bvp.hpp"
#include "piheart/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Synthesize a blood-volume-pulse recording as CSV (t_ms,value)"};
    double hr = 72.0;
    double hr_to = 0.0;
    double duration = 60.0;
    double noise = 0.0;
    double artifacts = 0.0;
    double fs = 100.0;
    std::uint64_t seed = 0;
    std::string out = "-";
    app.add_option("--hr", hr, "Heart rate in bpm")->capture_default_str();
    app.add_option("--hr-to", hr_to, "Ramp linearly from --hr to this rate over the recording");
    app.add_option("--duration", duration, "Length in seconds")->capture_default_str();
    app.add_option("--noise", noise, "Gaussian noise sigma (waveform peak is 1)")->capture_default_str();
    app.add_option("--artifacts", artifacts, "Movement artifact bursts per minute")->capture_default_str();
    app.add_option("--fs", fs, "Sample rate in Hz")->capture_default_str();
    app.add_option("--seed", seed, "Noise and artifact seed")->capture_default_str();
    app.add_option("--out", out, "Output file, '-' for stdout")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        piheart::BvpConfig c;
        c.sample_rate_hz = fs;
        c.hr_profile = hr_to > 0.0 ? piheart::HrProfile({{duration, hr, hr_to}}) : piheart::HrProfile::constant(hr);
        c.noise_sigma = noise;
        c.artifact_rate = artifacts;
        c.seed = seed;
        c.validate();
        if (!(duration > 0.0)) {
            throw piheart::ConfigError("duration must be positive");
        }
        const auto samples = piheart::synthesize(c, duration);
        if (out == "-") {
            piheart::write_bvp_csv(std::cout, samples);
        } else {
            piheart::write_bvp_csv(std::filesystem::path(out), samples);
        }
    } catch (const std::exception& e) {
        std::cerr << "bvp-synth: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
