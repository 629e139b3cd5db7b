#include "apa/dsp/tracks.hpp"

#include <algorithm>
#include <cmath>

#include "apa/common.hpp"

namespace apa::dsp {

namespace {

std::size_t frame_count(std::size_t n_samples, int frame_length, int hop_length) {
    if (n_samples < static_cast<std::size_t>(frame_length)) return 1;
    return 1 + (n_samples - static_cast<std::size_t>(frame_length)) /
                   static_cast<std::size_t>(hop_length);
}

void check_framing(const Waveform& w, int frame_length, int hop_length) {
    if (w.samples.empty()) throw Error("empty waveform");
    if (w.sample_rate_hz < 8000) throw Error("sample rate below 8000 Hz");
    if (hop_length < 1 || frame_length < hop_length)
        throw Error("invalid framing: need frame_length >= hop_length >= 1");
}

double median_inplace(std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

StatVector7 stats7(const std::vector<double>& values) {
    StatVector7 s;
    if (values.empty()) return s;
    std::size_t n = values.size();
    double sum = 0;
    double mx = values[0], mn = values[0];
    for (double v : values) {
        sum += v;
        mx = std::max(mx, v);
        mn = std::min(mn, v);
    }
    double mean = sum / static_cast<double>(n);
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);

    std::vector<double> tmp = values;
    double med = median_inplace(tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = std::abs(values[i] - med);
    double mad = median_inplace(tmp);

    s.mean = mean;
    s.std = std::sqrt(var);
    s.median = med;
    s.mad = mad;
    s.max = mx;
    s.min = mn;
    s.sum = sum;
    return s;
}

FrameTrack rms_track(const Waveform& w, int frame_length, int hop_length) {
    check_framing(w, frame_length, hop_length);
    std::size_t n = w.samples.size();
    std::size_t frames = frame_count(n, frame_length, hop_length);

    FrameTrack track;
    track.frame_length = frame_length;
    track.hop_length = hop_length;
    track.sample_rate_hz = w.sample_rate_hz;
    track.values.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        std::size_t start = f * static_cast<std::size_t>(hop_length);
        double acc = 0;
        for (int j = 0; j < frame_length; ++j) {
            std::size_t idx = start + static_cast<std::size_t>(j);
            double v = idx < n ? w.samples[idx] : 0.0;  // zero-pad past the end
            acc += v * v;
        }
        track.values[f] = std::sqrt(acc / frame_length);
    }
    return track;
}

FrameTrack f0_track(const Waveform& w, double fmin_hz, double fmax_hz,
                    int frame_length, int hop_length, double threshold) {
    check_framing(w, frame_length, hop_length);
    if (!(fmin_hz > 0 && fmin_hz < fmax_hz && fmax_hz < 0.5 * w.sample_rate_hz))
        throw Error("f0_track: need 0 < fmin < fmax < sample_rate/2");

    const double sr = w.sample_rate_hz;
    int tau_min = std::max(2, static_cast<int>(std::floor(sr / fmax_hz)));
    int tau_max = static_cast<int>(std::ceil(sr / fmin_hz));
    // Fixed integration window; every lag is computed over the same number
    // of terms, which keeps the normalization unbiased.
    int window = frame_length / 2;
    if (tau_max > frame_length - window) tau_max = frame_length - window;
    if (tau_max <= tau_min + 1)
        throw Error("f0_track: frame too short for the requested frequency range");

    std::size_t n = w.samples.size();
    std::size_t frames = frame_count(n, frame_length, hop_length);

    FrameTrack track;
    track.frame_length = frame_length;
    track.hop_length = hop_length;
    track.sample_rate_hz = w.sample_rate_hz;
    track.values.assign(frames, 0.0);

    std::vector<double> frame(static_cast<std::size_t>(frame_length));
    std::vector<double> diff(static_cast<std::size_t>(tau_max) + 2, 0.0);
    std::vector<double> cmnd(static_cast<std::size_t>(tau_max) + 2, 1.0);

    for (std::size_t f = 0; f < frames; ++f) {
        std::size_t start = f * static_cast<std::size_t>(hop_length);
        for (int j = 0; j < frame_length; ++j) {
            std::size_t idx = start + static_cast<std::size_t>(j);
            frame[static_cast<std::size_t>(j)] = idx < n ? w.samples[idx] : 0.0;
        }

        // Difference function d(tau) over the fixed window.
        for (int tau = 1; tau <= tau_max + 1; ++tau) {
            double acc = 0;
            const double* a = frame.data();
            const double* b = frame.data() + tau;
            for (int j = 0; j < window; ++j) {
                double d = a[j] - b[j];
                acc += d * d;
            }
            diff[static_cast<std::size_t>(tau)] = acc;
        }

        // Cumulative mean normalized difference.
        double cum = 0;
        for (int tau = 1; tau <= tau_max + 1; ++tau) {
            cum += diff[static_cast<std::size_t>(tau)];
            cmnd[static_cast<std::size_t>(tau)] =
                cum > 0 ? diff[static_cast<std::size_t>(tau)] * tau / cum : 1.0;
        }

        // First dip under the absolute threshold, descended to its local
        // minimum. No dip means unvoiced.
        int tau_est = 0;
        for (int tau = tau_min; tau <= tau_max; ++tau) {
            if (cmnd[static_cast<std::size_t>(tau)] < threshold) {
                while (tau + 1 <= tau_max &&
                       cmnd[static_cast<std::size_t>(tau + 1)] <
                           cmnd[static_cast<std::size_t>(tau)])
                    ++tau;
                tau_est = tau;
                break;
            }
        }
        if (tau_est == 0) continue;

        // Parabolic interpolation around the minimum.
        double refined = tau_est;
        if (tau_est > 1 && tau_est < tau_max + 1) {
            double d0 = cmnd[static_cast<std::size_t>(tau_est - 1)];
            double d1 = cmnd[static_cast<std::size_t>(tau_est)];
            double d2 = cmnd[static_cast<std::size_t>(tau_est + 1)];
            double denom = d0 - 2.0 * d1 + d2;
            if (std::abs(denom) > 1e-12) {
                double delta = 0.5 * (d0 - d2) / denom;
                if (delta > 1.0) delta = 1.0;
                if (delta < -1.0) delta = -1.0;
                refined += delta;
            }
        }
        double f0 = sr / refined;
        // Out-of-range candidates are marked unvoiced.
        if (f0 >= fmin_hz && f0 <= fmax_hz) track.values[f] = f0;
    }
    return track;
}

StatVector7 aggregate_stats(const FrameTrack& track, double start_s, double end_s,
                            ZeroPolicy policy) {
    if (track.values.empty()) throw Error("aggregate_stats: empty track");
    if (!(end_s > start_s))
        throw Error("aggregate_stats: degenerate span [" + format_real(start_s) + ", " +
                    format_real(end_s) + "]");
    double extent_begin = track.center_time(0);
    double extent_end = track.center_time(track.size() - 1);
    if (end_s <= extent_begin || start_s > extent_end)
        throw Error("aggregate_stats: span [" + format_real(start_s) + ", " +
                    format_real(end_s) + "] outside track extent [" +
                    format_real(extent_begin) + ", " + format_real(extent_end) + "]");

    std::vector<double> vals;
    for (std::size_t f = 0; f < track.size(); ++f) {
        double t = track.center_time(f);
        if (t >= start_s && t < end_s) vals.push_back(track.values[f]);
    }
    if (vals.empty())
        throw Error("aggregate_stats: span [" + format_real(start_s) + ", " +
                    format_real(end_s) + "] maps to no frame center");
    if (policy == ZeroPolicy::ExcludeZeros) {
        std::vector<double> voiced;
        for (double v : vals)
            if (v != 0.0) voiced.push_back(v);
        return stats7(voiced);  // all-unvoiced spans yield the zero vector
    }
    return stats7(vals);
}

}  // namespace apa::dsp
