"""802.11 link model - effective SNR, loss rates, airtime and the oracle label"""
