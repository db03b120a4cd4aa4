#include "sdtpwl/fom.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace sdtpwl::fom {

Vector flatten(const WellResponse& r)
{
    Vector v(static_cast<Eigen::Index>(r.size()));
    Eigen::Index k = 0;
    for (double bhp : r.injector_bhp)
        v[k++] = bhp / units::bar;
    for (double q : r.liquid_rate)
        v[k++] = q;
    for (double wct : r.water_cut)
        v[k++] = wct;
    return v;
}

std::size_t ObservationSet::total_size() const
{
    std::size_t n = 0;
    for (const auto& v : values)
        n += static_cast<std::size_t>(v.size());
    return n;
}

Vector ObservationSet::flat() const
{
    Vector out(static_cast<Eigen::Index>(total_size()));
    Eigen::Index k = 0;
    for (const auto& v : values) {
        out.segment(k, v.size()) = v;
        k += v.size();
    }
    return out;
}

ObservationSet observe(const std::vector<WellResponse>& responses, const std::vector<int>& schedule)
{
    ObservationSet obs;
    for (int n : schedule) {
        if (n < 1 || n > static_cast<int>(responses.size()))
            throw Error("fom", fmt::format("step {} is not among the {} simulated steps", n, responses.size()));
        obs.steps.push_back(n);
        obs.values.push_back(flatten(responses[n - 1]));
    }
    return obs;
}

} // namespace sdtpwl::fom
