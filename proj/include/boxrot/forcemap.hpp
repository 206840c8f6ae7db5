#pragma once

// Calibrated mapping from each control channel to the force it induces.

#include "boxrot/common.hpp"
#include "boxrot/sim.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace boxrot {

enum class Channel { V1 = 0, V2 = 1, P1 = 2, P2 = 3 };

inline constexpr std::array<Channel, 4> kChannels = {Channel::V1, Channel::V2, Channel::P1, Channel::P2};

inline const char* channel_name(Channel c) {
    switch (c) {
    case Channel::V1: return "v1";
    case Channel::V2: return "v2";
    case Channel::P1: return "p1";
    case Channel::P2: return "p2";
    }
    return "?";
}

inline Channel channel_from_name(const std::string& name) {
    for (Channel c : kChannels)
        if (name == channel_name(c)) return c;
    throw Error(ErrorKind::Format, "unknown channel '" + name + "'");
}

/// F1, F2 act along x on S1 and S2; F3, F4 act along y on S1 and S2.
struct ForceDecomposition {
    double f1 = 0.0;
    double f2 = 0.0;
    double f3 = 0.0;
    double f4 = 0.0;

    Vec2 on_s1() const { return {f1, f3}; }
    Vec2 on_s2() const { return {f2, f4}; }
    Vec2 total() const { return on_s1() + on_s2(); }
};

struct ForceBin {
    double center = 0.0;        ///< geometric bin center
    double command_mean = 0.0;  ///< mean command of the samples in the bin
    double mean = 0.0;          ///< mean force (N)
    double std = 0.0;           ///< sample standard deviation
    int count = 0;
};

class ChannelMap {
public:
    ChannelMap() = default;
    ChannelMap(double range, std::vector<ForceBin> bins) : range_(range), bins_(std::move(bins)) { finalize(); }

    double range() const { return range_; }
    const std::vector<ForceBin>& bins() const { return bins_; }
    int populated_bins() const {
        return static_cast<int>(std::count_if(bins_.begin(), bins_.end(), [](const ForceBin& b) { return b.count > 0; }));
    }

    /// Piecewise-linear through (0, 0) and the odd-symmetrized bin nodes; held
    /// constant beyond the outermost node.
    double lookup(double command) const {
        if (command == 0.0 || nodes_.empty()) return 0.0;
        const double c = std::abs(command);
        const double sign = command > 0 ? 1.0 : -1.0;
        double prev_c = 0.0, prev_f = 0.0;
        for (const auto& [nc, nf] : nodes_) {
            if (c <= nc) {
                const double w = nc > prev_c ? (c - prev_c) / (nc - prev_c) : 1.0;
                return sign * (prev_f + w * (nf - prev_f));
            }
            prev_c = nc;
            prev_f = nf;
        }
        return sign * prev_f;
    }

private:
    void finalize() {
        nodes_.clear();
        const int n = static_cast<int>(bins_.size());
        // Pair bin b with its mirror n-1-b; the bin containing zero stays pinned.
        for (int b = 0; b < n; ++b) {
            const int mirror = n - 1 - b;
            if (b > mirror) break;
            const ForceBin& lo = bins_[b];
            const ForceBin& hi = bins_[mirror];
            if (b == mirror || (lo.center <= 0.0 && hi.center <= 0.0) || (lo.center >= 0 && hi.center >= 0)) continue;
            const double w = lo.count + hi.count;
            if (w == 0) continue;
            const double c = (lo.count * std::abs(lo.command_mean) + hi.count * std::abs(hi.command_mean)) / w;
            const double f = (-lo.count * lo.mean + hi.count * hi.mean) / w;
            nodes_.emplace_back(c, f);
        }
        std::sort(nodes_.begin(), nodes_.end());
    }

    double range_ = 0.0;
    std::vector<ForceBin> bins_;
    std::vector<std::pair<double, double>> nodes_;
};

class ControlForceMap {
public:
    ControlForceMap() = default;
    /// The calibration box's total mass and the mass it rested on each belt
    /// with; zeros when unknown.
    explicit ControlForceMap(std::array<ChannelMap, 4> channels, double reference_mass = 0.0,
                             std::array<double, 2> reference_load = {0.0, 0.0})
        : channels_(std::move(channels)), reference_mass_(reference_mass), reference_load_(reference_load) {}

    double reference_mass() const { return reference_mass_; }
    const std::array<double, 2>& reference_load() const { return reference_load_; }

    const ChannelMap& channel(Channel c) const { return channels_[static_cast<int>(c)]; }
    double lookup(Channel c, double command) const { return channel(c).lookup(command); }

    ForceDecomposition decompose(const Action& a) const {
        return {lookup(Channel::V1, a.v1), lookup(Channel::V2, a.v2), lookup(Channel::P1, a.p1),
                lookup(Channel::P2, a.p2)};
    }

private:
    std::array<ChannelMap, 4> channels_;
    double reference_mass_ = 0.0;
    std::array<double, 2> reference_load_ = {0.0, 0.0};
};

// ---------------------------------------------------------------------------
// CSV persistence
//
//   # boxrot-forcemap v1
//   # <free-form provenance lines>
//   reference,<total mass>,<load on belt 1>,<load on belt 2>
//   channel,range,bin_center,command_mean,mean,std,count
//   v1,0.3,-0.2666666667,...

inline constexpr int kForceMapVersion = 2;

inline void write_force_map_csv(std::ostream& os, const ControlForceMap& map,
                                const std::vector<std::string>& provenance = {}) {
    os << "# boxrot-forcemap v" << kForceMapVersion << '\n';
    for (const auto& line : provenance) os << "# " << line << '\n';
    os << std::setprecision(17);
    os << "reference," << map.reference_mass() << ',' << map.reference_load()[0] << ',' << map.reference_load()[1]
       << '\n';
    os << "channel,range,bin_center,command_mean,mean,std,count\n";
    for (Channel c : kChannels) {
        const ChannelMap& ch = map.channel(c);
        for (const ForceBin& b : ch.bins())
            os << channel_name(c) << ',' << ch.range() << ',' << b.center << ',' << b.command_mean << ',' << b.mean
               << ',' << b.std << ',' << b.count << '\n';
    }
}

inline ControlForceMap read_force_map_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "# boxrot-forcemap v" + std::to_string(kForceMapVersion))
        throw Error(ErrorKind::Format, "missing force map version header");
    while (std::getline(is, line) && line.rfind('#', 0) == 0) {
    }
    double reference_mass = 0.0;
    std::array<double, 2> reference_load{};
    {
        std::stringstream ss(line);
        std::string key, a, b, c;
        if (!std::getline(ss, key, ',') || key != "reference" || !std::getline(ss, a, ',') ||
            !std::getline(ss, b, ',') || !std::getline(ss, c))
            throw Error(ErrorKind::Format, "missing force map reference line");
        reference_mass = std::stod(a);
        reference_load = {std::stod(b), std::stod(c)};
    }
    std::getline(is, line);
    if (line != "channel,range,bin_center,command_mean,mean,std,count")
        throw Error(ErrorKind::Format, "unexpected force map column header");
    std::array<double, 4> ranges{};
    std::array<std::vector<ForceBin>, 4> bins;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 7) throw Error(ErrorKind::Format, "bad force map row: " + line);
        const int c = static_cast<int>(channel_from_name(f[0]));
        ranges[c] = std::stod(f[1]);
        bins[c].push_back({std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stoi(f[6])});
    }
    std::array<ChannelMap, 4> channels;
    for (int c = 0; c < 4; ++c) {
        if (bins[c].empty()) throw Error(ErrorKind::Format, std::string("channel without bins: ") + channel_name(kChannels[c]));
        channels[c] = ChannelMap(ranges[c], std::move(bins[c]));
    }
    return ControlForceMap(std::move(channels), reference_mass, reference_load);
}

inline void save_force_map(const std::string& path, const ControlForceMap& map,
                           const std::vector<std::string>& provenance = {}) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
    write_force_map_csv(os, map, provenance);
}

inline ControlForceMap load_force_map(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
    return read_force_map_csv(is);
}

}  // namespace boxrot
