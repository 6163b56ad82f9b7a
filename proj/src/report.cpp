#include "qnet/report.hpp"

#include "qnet/quantizer.hpp"

#include <cmath>
#include <sstream>

namespace qnet {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

const LayerQuantPlan& plan_at(const QuantizedModel& qm, std::size_t layer) {
    if (layer >= qm.plans.size() || !qm.plans[layer])
        throw ValidationError("no quantization plan at layer " + std::to_string(layer));
    return *qm.plans[layer];
}

} // namespace

std::string curve_csv(const QuantizedModel& qmodel, std::size_t layer, std::size_t kernel,
                      int grid_points) {
    if (grid_points < 2) throw ValidationError("curve grid needs at least 2 points");
    const LayerQuantPlan& plan = plan_at(qmodel, layer);
    const LayerSpec& spec = qmodel.base.layers()[layer];
    std::size_t n_groups = plan.groups.size();
    if (kernel >= n_groups) throw ValidationError("kernel index out of range for layer");
    Tensor slice = plan.partitioning == Partitioning::global ? spec.weight
                                                             : spec.weight.slice0(kernel);
    const WeightGroup& group = plan.groups[kernel];
    std::ostringstream os;
    if (group.terms.size() == 1) {
        const QuantScheme scheme = group.terms[0].scheme;
        const double alpha_max = uniform_alpha(slice, scheme);
        const double delta = search_delta(slice, scheme);
        os << "alpha,mse\n";
        for (int k = 1; k <= grid_points; ++k) {
            double alpha = alpha_max * (static_cast<double>(k) / grid_points);
            os << fmt(alpha) << "," << fmt(projection_mse(slice, alpha, delta, scheme)) << "\n";
        }
    } else {
        const QuantScheme s1 = group.terms[0].scheme;
        const QuantScheme s2 = group.terms[1].scheme;
        const double a1_max = uniform_alpha(slice, s1);
        const double a2_max = uniform_alpha(slice, s2);
        os << "alpha1,alpha2,mse\n";
        for (int k1 = 1; k1 <= grid_points; ++k1) {
            double a1 = a1_max * (static_cast<double>(k1) / grid_points);
            for (int k2 = 1; k2 <= grid_points; ++k2) {
                double a2 = a2_max * (static_cast<double>(k2) / grid_points);
                os << fmt(a1) << "," << fmt(a2) << ","
                   << fmt(dual_objective_mse(slice, a1, a2, s1, s2)) << "\n";
            }
        }
    }
    return os.str();
}

std::string scales_csv(const QuantizedModel& qmodel) {
    std::ostringstream os;
    os << "# alpha normalized by max|T| of its group, beta1 by calibration max|X|\n";
    os << "layer,kind,groups,alpha_norm_mean,alpha_norm_std,beta1_norm,gamma_mean,gamma_std\n";
    for (std::size_t l = 0; l < qmodel.base.layer_count(); ++l) {
        if (!qmodel.plans[l]) continue;
        const LayerQuantPlan& plan = *qmodel.plans[l];
        const LayerSpec& spec = qmodel.base.layers()[l];

        std::vector<double> alpha_norm;
        std::vector<double> gammas;
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            Tensor slice = plan.partitioning == Partitioning::global ? spec.weight
                                                                     : spec.weight.slice0(g);
            double amax = slice.abs_max();
            for (const QuantizedTensor& t : plan.groups[g].terms)
                alpha_norm.push_back(amax > 0 ? t.alpha / amax : 0.0);
            gammas.push_back(plan.groups[g].gamma);
        }
        auto stats = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(v.size())));
        };
        auto [am, as] = stats(alpha_norm);
        auto [gm, gs] = stats(gammas);
        double beta_norm = 0.0;
        if (plan.act.enabled && plan.act.calib_abs_max > 0.0)
            beta_norm = plan.act.beta1 / plan.act.calib_abs_max;
        os << l << "," << to_string(spec.kind) << "," << plan.groups.size() << "," << fmt(am) << ","
           << fmt(as) << "," << fmt(beta_norm) << "," << fmt(gm) << "," << fmt(gs) << "\n";
    }
    return os.str();
}

} // namespace qnet
