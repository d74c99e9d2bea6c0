"""StateRate bench - Ingress (Source) modules: flight, channel and trace generation"""
