// Online intervals for a stream whose noise level jumps half-way through.
// Prints the running coverage of split conformal with and without ACI.

#include "aci/aci.hpp"

#include <cstdio>
#include <vector>

int main() {
    aci::Rng rng(42);
    aci::ScoreWindow window(200);
    for (int i = 0; i < 200; ++i) window.push(std::abs(rng.normal()));

    const std::vector<aci::AciConfig> configs{aci::AciConfig::adaptive(0.1, 0.01), aci::AciConfig::fixed(0.1)};
    std::vector<aci::AciState> states;
    for (const auto& c : configs) states.push_back(aci::init(c));
    std::vector<int> misses(configs.size(), 0);

    const int steps = 4000;
    for (int t = 1; t <= steps; ++t) {
        const double sd = t <= steps / 2 ? 1.0 : 1.5;
        const double y = sd * rng.normal();
        const aci::AbsoluteScore ctx{0.0};
        const double score = aci::compute_score(ctx, y);
        for (std::size_t k = 0; k < configs.size(); ++k) {
            const double q = window.threshold(aci::effective_quantile_level(states[k]));
            const aci::ErrBit err = aci::err_indicator(score, q);
            misses[k] += aci::to_int(err);
            states[k] = aci::update(states[k], err);
        }
        if (t % 1000 == 0)
            std::printf("t=%d  aci coverage %.3f  fixed coverage %.3f\n", t, 1.0 - misses[0] / double(t),
                        1.0 - misses[1] / double(t));
    }
}
