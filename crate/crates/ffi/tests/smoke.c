#include <math.h>
#include <stdio.h>
#include "proxynorm.h"

int main(void) {
    double q = 0.0;
    if (pn_inv_norm_cdf(0.975, &q) != PN_STATUS_OK || fabs(q - 1.959963984540054) > 1e-12) return 1;
    if (pn_inv_norm_cdf(0.0, &q) != PN_STATUS_DOMAIN) return 2;
    char msg[128];
    if (pn_last_error_message(msg, sizeof msg) == 0) return 3;

    double data[16];
    for (int i = 0; i < 16; i++) data[i] = (double)((i * 7) % 5) - 2.0;
    PnTensor *x = NULL, *y = NULL;
    if (pn_tensor_new(2, 2, 2, 2, data, 16, &x) != PN_STATUS_OK) return 4;
    if (pn_normalize(x, PN_NORM_KIND_LAYER_NORM, 0, 0.0, &y) != PN_STATUS_OK) return 5;
    PnPowerTerms layer;
    double rho = 0.0;
    if (pn_power_decomposition(y, NULL, 0, &layer, &rho) != PN_STATUS_OK) return 6;
    if (fabs(layer.p_total - 1.0) > 1e-12) return 7;
    pn_tensor_free(y);
    pn_tensor_free(x);

    PnActivation relu = {PN_ACTIVATION_KIND_RELU, 1.0, 0.0};
    PnRandomNet *net = NULL;
    if (pn_randomnet_build_uniform(2, 4, 2, PN_NORM_KIND_LAYER_NORM, 0, relu, false, false, 1, &net) != PN_STATUS_OK) return 8;
    pn_randomnet_free(net);
    printf("ok\n");
    return 0;
}
