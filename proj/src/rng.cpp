#include "g2l/rng.hpp"

#include <cmath>

#include "g2l/errors.hpp"

namespace g2l {

uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

Rng Rng::stream(uint64_t root, uint64_t a, uint64_t b) {
    uint64_t s = mix64(root);
    s = mix64(s ^ (a + 0x9E3779B97F4A7C15ull));
    s = mix64(s ^ (b + 0xD1B54A32D192ED03ull));
    return Rng(s);
}

double Rng::uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::gumbel() {
    return -std::log(-std::log(uniform()));
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % un);
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<int>(x % un);
}

std::vector<double> Rng::normal_vec(size_t n, double mean, double stddev) {
    std::vector<double> out(n);
    for (auto& v : out) v = mean + stddev * normal();
    return out;
}

std::vector<double> Rng::uniform_vec(size_t n, double lo, double hi) {
    std::vector<double> out(n);
    for (auto& v : out) v = lo + (hi - lo) * uniform();
    return out;
}

}  // namespace g2l
