"""Compiled inner loops of the ON-interval decoder.

Forward Euler on ``(i, u_c)`` with per-sample step ``h = duty / (f_s n_sub)``;
the backward kernel replays the forward pass and runs the adjoint recursion.
Parameter layout follows physics.PARAM_NAMES.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def decode_forward(latent, lam, duty, f_s, load_index, n_sub):
    L, R_L, C, R_C, R_dson, V_in = lam[0], lam[1], lam[2], lam[3], lam[4], lam[8]
    r_on = R_dson + R_L
    out = np.empty_like(latent)
    for n in range(latent.shape[0]):
        R = lam[4 + load_index[n]]
        g = R / (R + R_C)
        h = duty[n] / (f_s[n] * n_sub)
        i = latent[n, 0]
        u = latent[n, 1]
        for _ in range(n_sub):
            uo = g * (u + R_C * i)
            fi = (V_in - i * r_on - uo) / L
            fu = (i - uo / R) / C
            i = i + h * fi
            u = u + h * fu
        out[n, 0] = i
        out[n, 1] = g * (u + R_C * i)
    return out


@njit(cache=True)
def decode_backward(latent, lam, duty, f_s, load_index, n_sub, upstream):
    L, R_L, C, R_C, R_dson, V_in = lam[0], lam[1], lam[2], lam[3], lam[4], lam[8]
    r_on = R_dson + R_L
    N = latent.shape[0]
    out = np.empty_like(latent)
    d_latent = np.empty_like(latent)
    d_lam = np.zeros(10)
    i_hist = np.empty(n_sub + 1)
    u_hist = np.empty(n_sub + 1)
    for n in range(N):
        R = lam[4 + load_index[n]]
        g = R / (R + R_C)
        dg_dRC = -R / (R + R_C) ** 2
        dg_dR = R_C / (R + R_C) ** 2
        h = duty[n] / (f_s[n] * n_sub)
        i = latent[n, 0]
        u = latent[n, 1]
        i_hist[0] = i
        u_hist[0] = u
        for k in range(n_sub):
            uo = g * (u + R_C * i)
            fi = (V_in - i * r_on - uo) / L
            fu = (i - uo / R) / C
            i = i + h * fi
            u = u + h * fu
            i_hist[k + 1] = i
            u_hist[k + 1] = u
        out[n, 0] = i
        out[n, 1] = g * (u + R_C * i)

        # output stage: (i_n, u_out(i_n, u_n))
        up_i = upstream[n, 0]
        up_u = upstream[n, 1]
        s = u + R_C * i
        a_i = up_i + up_u * g * R_C
        a_u = up_u * g
        gRC = up_u * (dg_dRC * s + g * i)
        gR = up_u * dg_dR * s
        gL = 0.0
        g_series = 0.0
        gC = 0.0
        gVin = 0.0
        for k in range(n_sub - 1, -1, -1):
            i = i_hist[k]
            u = u_hist[k]
            s = u + R_C * i
            uo = g * s
            fi = (V_in - i * r_on - uo) / L
            fu = (i - uo / R) / C
            w = -a_i / L - a_u / (R * C)  # adjoint of u_out inside the step
            gL -= h * a_i * fi / L
            g_series -= h * a_i * i / L
            gVin += h * a_i / L
            gC -= h * a_u * fu / C
            gRC += h * w * (dg_dRC * s + g * i)
            gR += h * (w * dg_dR * s + a_u * uo / (R * R * C))
            a_i, a_u = (a_i + h * (-a_i * r_on / L + a_u / C + w * g * R_C),
                        a_u + h * (w * g))
        d_latent[n, 0] = a_i
        d_latent[n, 1] = a_u
        d_lam[0] += gL
        d_lam[1] += g_series
        d_lam[2] += gC
        d_lam[3] += gRC
        d_lam[4] += g_series
        d_lam[4 + load_index[n]] += gR
        d_lam[8] += gVin
        # V_F only acts in the OFF interval, which the decoder does not integrate
    return out, d_latent, d_lam
